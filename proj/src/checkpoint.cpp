#include "dtts/checkpoint.hpp"

namespace dtts::pipeline {

static constexpr char kMagic[4] = {'D', 'T', 'T', '2'};

const char* stage_tag_name(StageTag tag) {
  switch (tag) {
    case StageTag::kNone: return "none";
    case StageTag::kCodec: return "codec";
    case StageTag::kT2SStage1: return "t2s-stage1";
    case StageTag::kT2SStage2: return "t2s-stage2";
    case StageTag::kT2SStage3: return "t2s-stage3";
    case StageTag::kS2M: return "s2m";
    case StageTag::kComplete: return "complete";
  }
  return "unknown";
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put_u32(ckpt.version);
  w.put_u32(uint32_t(ckpt.stage));
  w.put_str(ckpt.config_text);
  w.put_u32(uint32_t(ckpt.sections.size()));
  // Section table first (name, size), payloads after, in map (sorted) order.
  for (const auto& [name, blob] : ckpt.sections) {
    w.put_str(name);
    w.put_u64(blob.size());
  }
  for (const auto& [name, blob] : ckpt.sections) w.put_bytes(blob.data(), blob.size());
  return std::move(w.buf);
}

Checkpoint deserialize_checkpoint(const std::string& blob) {
  ByteReader r(blob);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("checkpoint: bad magic (not a DTT2 file)");
  Checkpoint ckpt;
  ckpt.version = r.get_u32();
  if (ckpt.version != 1) throw std::runtime_error("checkpoint: unsupported version");
  ckpt.stage = StageTag(r.get_u32());
  ckpt.config_text = r.get_str();
  const uint32_t n = r.get_u32();
  std::vector<std::pair<std::string, uint64_t>> table;
  for (uint32_t i = 0; i < n; ++i) {
    std::string name = r.get_str();
    const uint64_t size = r.get_u64();
    table.push_back({std::move(name), size});
  }
  for (const auto& [name, size] : table) {
    std::string payload(size, '\0');
    r.get_bytes(payload.data(), size);
    ckpt.sections[name] = std::move(payload);
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_file(path));
}

}  // namespace dtts::pipeline
