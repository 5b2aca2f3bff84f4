#pragma once

#include "dtts/codec.hpp"
#include "dtts/conditioners.hpp"
#include "dtts/corpus.hpp"
#include "dtts/nn.hpp"

#include <optional>
#include <vector>

namespace dtts::t2s {

using ad::Value;

struct T2SConfig {
  int dim = 128;
  int layers = 4;
  int heads = 4;
  int v_text = 32;
  int v_sem = 64;
  int l_speech = 64;  // positional/duration table rows; must exceed max token count
  int max_text = 64;
  int context = 512;
  float tied_init_std = 0.25f;
  float embed_init_std = 0.1f;
  uint64_t seed = 11;

  int eos_id() const { return v_sem; }  // output class index of the terminator
};

// Assembled input: [cond, p, <BT>, text..., <BA>, sem...]. The cond slot is c
// or c+e; p is a duration-table row or the zero vector.
struct T2SInputSequence {
  Value embedded;      // S x D
  int prefix_len = 0;  // slots before <BA> (cond, p, <BT>, text)
  int n_sem_inputs = 0;
  bool has_emotion = false;
  bool p_is_zero = false;
};

struct T2SOutput {
  codec::SemanticTokenSeq tokens;
  Mat h_gpt;  // one row per generated token
  bool truncated = false;
};

struct DecodeOptions {
  std::optional<int> duration;  // token count; absent = free-form (p = 0)
  enum class Mode { kLearned, kStrict } mode = Mode::kLearned;
  int max_len = 0;  // 0 = l_speech - 1
  int top_k = 0;    // 0 = greedy
  uint64_t sample_seed = 0;
};

struct T2SModel {
  T2SConfig cfg;
  // Single storage serving both the duration lookup and the semantic
  // positional encoding; the two views below index the same matrix.
  Value tied_table;  // l_speech x dim
  Value text_embed;  // v_text x dim
  Value text_pos;    // max_text x dim
  Value sem_embed;   // v_sem x dim
  Value e_bt, e_ba;  // 1 x dim boundary tokens
  struct Block {
    Value ln1_g, ln1_b, ln2_g, ln2_b;
    nn::Linear wq, wk, wv, wo, ff1, ff2;
  };
  std::vector<Block> blocks;
  Value final_ln_g, final_ln_b;
  nn::Linear head;  // dim -> v_sem + 1
  // Set once the speaker conditioner is frozen (stage >= 2); emotion input
  // before that point is a configuration error.
  bool emotion_enabled = false;

  T2SModel() = default;
  explicit T2SModel(const T2SConfig& cfg);

  nn::ParamMap params() const;

  Mat::RowXpr duration_row(int t);              // view into the tied storage
  Mat::RowXpr positional_row(int t);            // same storage, other role
  Value duration_embedding(int t) const;        // 1 x dim, row t

  T2SInputSequence assemble(const Value& c, const std::optional<Value>& e,
                            const std::optional<Value>& p, const std::vector<int>& text_tokens,
                            const std::vector<int>& sem_tokens) const;

  // Teacher-forced pass. logits: (T+1) x (v_sem+1), row t scores token y_t
  // with y_T the terminator. h_gpt: final-layer hidden states over the same
  // semantic positions, (T+1) x dim.
  struct Forward {
    Value logits;
    Value h_gpt;
  };
  Forward forward_teacher_forced(const T2SInputSequence& seq) const;

  // Trunk over an externally supplied embedded sequence (used by tests that
  // probe causality against the raw inputs).
  Forward forward_from_embedded(const Value& embedded, int prefix_len) const;

  T2SOutput decode(const Value& c, const std::optional<Value>& e, const DecodeOptions& opts,
                   const std::vector<int>& text_tokens) const;
};

// -(1/(T+1)) * sum_t log q(y_t) - alpha * log q_e. `targets` must include the
// terminator as its final entry; q_e is the speaker posterior for the emotion
// embedding (pass a constant 1 when the adversarial term is off).
Value ar_loss(const Value& token_logits, const std::vector<int>& targets_with_eos,
              const Value& q_e, float alpha);
Value ar_loss(const Value& token_logits, const std::vector<int>& targets_with_eos,
              float q_e, float alpha);

struct StageConfig {
  int steps = 2000;
  int batch = 4;
  float lr = 1e-3f;
  float alpha = 0.1f;
  float grl_lambda = 1.0f;
  float p_zero_prob = 0.3f;
  double speed_min = 0.9;
  double speed_max = 1.1;
  float grad_clip = 1.0f;
  uint64_t seed = 123;
  int log_every = 0;
};

struct TrainExample {
  Mat prompt_mel;  // perturbed, for the speaker conditioner
  Mat style_mel;   // perturbed target, for the emotion conditioner
  std::vector<int> text;
  codec::SemanticTokenSeq sem;
  bool p_zeroed = false;
  int speaker_index = 0;
};

// One training draw: speaker, prompt/target pair, speed factors r1/r2, and
// the per-sample duration-zeroing coin. Pure given the rng stream.
TrainExample sample_example(const corpus::Corpus& corpus, const codec::CodecModel& codec,
                            int stage, const StageConfig& cfg, Rng& rng);

struct StageStats {
  int64_t sample_count = 0;
  int64_t p_zero_count = 0;
  std::vector<double> losses;  // one entry per step
};

// Stages: 1 = full data, cond=c, duration randomly zeroed; 2 = emotional
// subset, cond=c+e, speaker conditioner frozen, adversarial speaker term on;
// 3 = all conditioners frozen, trunk fine-tune.
StageStats stage_train(int stage, const corpus::Corpus& corpus, const codec::CodecModel& codec,
                       T2SModel& model, cond::SpeakerConditioner& speaker,
                       cond::EmotionConditioner& emotion, cond::SpeakerClassifier& classifier,
                       const StageConfig& cfg);

// Greedy token accuracy under teacher forcing with deterministic prompts;
// includes the terminator position.
double teacher_forced_accuracy(const T2SModel& model, const corpus::Corpus& corpus,
                               const codec::CodecModel& codec,
                               const cond::SpeakerConditioner& speaker,
                               const cond::EmotionConditioner& emotion, bool use_emotion);

}  // namespace dtts::t2s
