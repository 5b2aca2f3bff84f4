#pragma once

#include "dtts/common.hpp"

#include <map>
#include <string>

namespace dtts::pipeline {

enum class StageTag : uint32_t {
  kNone = 0,
  kCodec = 1,
  kT2SStage1 = 2,
  kT2SStage2 = 3,
  kT2SStage3 = 4,
  kS2M = 5,
  kComplete = 6,  // T2E bank + student present
};

const char* stage_tag_name(StageTag tag);

// Versioned container, magic `DTT2`: header, canonical config text, stage tag,
// and a name -> blob section table. Serialization is byte-stable: saving a
// loaded checkpoint reproduces it exactly.
struct Checkpoint {
  uint32_t version = 1;
  StageTag stage = StageTag::kNone;
  std::string config_text;
  std::map<std::string, std::string> sections;

  uint64_t config_hash() const { return fnv1a(config_text); }
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& blob);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace dtts::pipeline
