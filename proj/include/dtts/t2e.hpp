#pragma once

#include "dtts/conditioners.hpp"
#include "dtts/corpus.hpp"
#include "dtts/emotions.hpp"
#include "dtts/nn.hpp"

#include <array>
#include <memory>
#include <string>
#include <vector>

namespace dtts::t2e {

// Point on the 7-emotion probability simplex.
struct EmotionDistribution {
  std::array<double, kNumEmotions> p{};

  double sum() const;
  void validate(double tol = 1e-6) const;  // non-negative, sums to 1 within tol
  void renormalize();
  int argmax() const;
  static EmotionDistribution one_hot(int emotion);
  static EmotionDistribution uniform();
};

double cross_entropy(const EmotionDistribution& target, const EmotionDistribution& pred);
double entropy(const EmotionDistribution& p);

// Prompt protocol shared by every teacher backend. The classification prompt
// travels verbatim on the wire; generation prompts have {emotion} substituted.
extern const char* const kClassificationPrompt;
extern const char* const kDescriptivePromptTemplate;
extern const char* const kScriptPromptTemplate;

enum class PromptKind { kDescriptive, kScript };
const char* prompt_kind_name(PromptKind kind);
std::string generation_prompt(int emotion, PromptKind kind);

class Teacher {
 public:
  virtual ~Teacher() = default;
  virtual std::string generate(int emotion, PromptKind kind, int index) = 0;
  virtual EmotionDistribution classify(const std::string& text) = 0;
};

// Deterministic keyword-lexicon backend for offline runs. Texts with no
// lexicon hit fall back to a Neutral-dominant distribution (p_Neutral = 0.7).
// All outputs are rounded to two decimals and sum to exactly 1.
class LexiconTeacher : public Teacher {
 public:
  explicit LexiconTeacher(uint64_t seed = 17);
  std::string generate(int emotion, PromptKind kind, int index) override;
  EmotionDistribution classify(const std::string& text) override;

 private:
  uint64_t seed_;
};

// Chat-completion-style HTTP backend. POST /v1/emotion with {"prompt", "text"}
// must return a JSON object whose keys are exactly the 7 emotion names;
// POST /v1/generate with {"prompt", "index"} must return {"text"}. Responses
// off the simplex by <= `simplex_tol` are renormalized, otherwise rejected.
class HttpTeacher : public Teacher {
 public:
  HttpTeacher(std::string host, int port, int timeout_sec = 10, int retries = 1,
              double simplex_tol = 0.02);
  std::string generate(int emotion, PromptKind kind, int index) override;
  EmotionDistribution classify(const std::string& text) override;

 private:
  std::string host_;
  int port_;
  int timeout_sec_;
  int retries_;
  double simplex_tol_;
};

// Validation wrapper over a backend: enforces the simplex contract before a
// distribution is accepted.
EmotionDistribution teacher_predict(const std::string& text, Teacher& teacher,
                                    double simplex_tol = 0.02);

struct DistillPair {
  std::string text;
  PromptKind kind = PromptKind::kDescriptive;
  EmotionDistribution p;
};

// Balanced dataset over (emotion, prompt kind) cells, labelled via the
// classification protocol. Assembly is ordered by generation index regardless
// of teacher-call completion order.
std::vector<DistillPair> build_distill_dataset(int n, Teacher& teacher, Rng& rng,
                                               int parallelism = 1);

// One JSON object per line: {"text": ..., "kind": ..., "p": [7 floats]}.
void save_distill_dataset(const std::string& path, const std::vector<DistillPair>& data);
std::vector<DistillPair> load_distill_dataset(const std::string& path);

// Per-emotion embedding lists extracted by the trained emotion conditioner,
// with cached class means.
struct EmotionBank {
  std::array<std::vector<Vec>, kNumEmotions> members;
  std::array<Vec, kNumEmotions> means;

  void validate() const;
};

EmotionBank build_bank(const corpus::Corpus& emotional_corpus,
                       const cond::EmotionConditioner& conditioner);

// e = sum_e p_e * mean(members_e); linear in p.
Vec mix_emotion_vector(const EmotionDistribution& p, const EmotionBank& bank);

// Small frozen text encoder (char-bigram tokens, 2 transformer layers) with
// low-rank adapters on the attention projections and a trainable head.
struct StudentConfig {
  int vocab = 256;
  int dim = 64;
  int layers = 2;
  int heads = 2;
  int max_tokens = 48;
  int lora_rank = 4;
  uint64_t seed = 41;
};

struct LoraPair {
  ad::Value a;  // rank x dim (scaled down at init)
  ad::Value b;  // dim x rank (zero at init, so adapters start as no-ops)
};

struct Student {
  StudentConfig cfg;
  // Frozen base.
  ad::Value tok_embed, pos_embed;
  struct Block {
    ad::Value ln1_g, ln1_b, ln2_g, ln2_b;
    nn::Linear wq, wk, wv, wo, ff1, ff2;
    LoraPair lq, lk, lv, lo;
  };
  std::vector<Block> blocks;
  ad::Value final_ln_g, final_ln_b;
  nn::Linear head;  // dim -> 7, trainable

  Student() = default;
  explicit Student(const StudentConfig& cfg);

  nn::ParamMap base_params() const;     // theta, frozen during distillation
  nn::ParamMap adapter_params() const;  // phi + head

  std::vector<int> tokenize(const std::string& text) const;
  ad::Value logits(const std::string& text) const;  // 1 x 7
  EmotionDistribution predict(const std::string& text) const;
};

struct DistillConfig {
  int steps = 600;
  int batch = 8;
  float lr = 3e-3f;
  double holdout_frac = 0.2;
  float grad_clip = 1.0f;
  uint64_t seed = 43;
  int log_every = 0;
};

struct DistillStats {
  double train_ce_before = 0.0;
  double train_ce_after = 0.0;
  double holdout_ce_before = 0.0;
  double holdout_ce_after = 0.0;
  uint64_t base_checksum_before = 0;
  uint64_t base_checksum_after = 0;
};

// Minimizes mean cross-entropy against teacher distributions; only adapters
// and the head move. lora_rank must stay below the attention width.
DistillStats distill_student(Student& student, const std::vector<DistillPair>& dataset,
                             const DistillConfig& cfg);

double mean_cross_entropy(const Student& student, const std::vector<DistillPair>& pairs);

void save_student(ByteWriter& w, const Student& student);
void load_student(ByteReader& r, Student& student);

}  // namespace dtts::t2e
