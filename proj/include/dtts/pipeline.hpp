#pragma once

#include "dtts/checkpoint.hpp"
#include "dtts/config.hpp"

#include <functional>
#include <memory>
#include <optional>

namespace dtts::pipeline {

// Everything the cascade trains, in one place.
struct TrainedSystem {
  RunConfig cfg;
  StageTag stage = StageTag::kNone;
  codec::CodecModel codec_model;
  cond::SpeakerConditioner speaker;
  cond::EmotionConditioner emotion;
  cond::SpeakerClassifier classifier;
  t2s::T2SModel t2s_model;
  s2m::S2MModel s2m_model;
  t2e::EmotionBank bank;
  t2e::Student student;
  bool has_bank = false;
  bool has_student = false;
};

TrainedSystem init_system(const RunConfig& cfg);
Checkpoint to_checkpoint(const TrainedSystem& system);
TrainedSystem from_checkpoint(const Checkpoint& ckpt);

using StageCallback = std::function<void(StageTag, const TrainedSystem&)>;

// Runs codec training, the three sequence-model stages, mel-decoder training,
// and the emotion bank + distillation, in order, resuming past completed
// phases when a checkpoint is supplied. The callback fires after each phase.
TrainedSystem train_all(const RunConfig& cfg, const corpus::Corpus& corpus,
                        const std::optional<Checkpoint>& resume = std::nullopt,
                        const StageCallback& on_stage = nullptr,
                        t2e::Teacher* teacher_override = nullptr);

struct StyleSpec {
  std::optional<Mat> audio;                          // style prompt mel
  std::optional<std::string> text;                   // routed through the student
  std::optional<t2e::EmotionDistribution> vector;    // explicit distribution
};

struct SynthesisRequest {
  std::vector<int> text_tokens;
  Mat timbre_prompt;  // mel supplying speaker identity
  StyleSpec style;
  std::optional<int> duration_tokens;  // absent = free-form
  uint64_t seed = 0;
};

struct SynthesisResult {
  std::vector<float> waveform;
  Mat mel;
  codec::SemanticTokenSeq tokens;
  bool truncated = false;
};

SynthesisResult synthesize(const TrainedSystem& system, const SynthesisRequest& request);

struct DurationReport {
  struct PerFactor {
    double factor = 0.0;
    double error_rate = 0.0;     // 100 * mean |gen - target| / target
    double mismatch_rate = 0.0;  // 100 * fraction(gen != target)
    int evaluated = 0;
    int skipped = 0;  // target length outside the duration table
  };
  struct Item {
    std::string utterance_id;
    double factor = 0.0;
    int target_len = 0;
    int generated_len = 0;
  };
  std::vector<PerFactor> per_factor;
  std::vector<Item> items;

  bool all_exact() const;
};

DurationReport eval_duration(const TrainedSystem& system, const corpus::Corpus& test_corpus,
                             const std::vector<double>& factors);

std::string duration_report_json(const DurationReport& report);
std::string duration_report_table(const DurationReport& report);

// Phase reconstruction of a log-mel matrix under the run's analysis settings.
std::vector<float> griffin_lim(const TrainedSystem& system, const Mat& mel, int iters);

// Hook for external scoring models (ASR word error rate, speaker or emotion
// similarity). No backend ships in this repository; register one at runtime.
class ExternalMetric {
 public:
  virtual ~ExternalMetric() = default;
  virtual std::string name() const = 0;
  virtual double score(const std::vector<float>& waveform,
                       const corpus::Utterance& reference) = 0;
};

void register_external_metric(std::shared_ptr<ExternalMetric> metric);
const std::vector<std::shared_ptr<ExternalMetric>>& external_metrics();

}  // namespace dtts::pipeline
