#pragma once

#include "dtts/codec.hpp"
#include "dtts/conditioners.hpp"
#include "dtts/corpus.hpp"
#include "dtts/nn.hpp"
#include "dtts/t2s.hpp"

#include <functional>
#include <optional>

namespace dtts::s2m {

using ad::Value;

struct S2MConfig {
  int d_mel = 80;
  int dim = 128;     // conditioning width (semantic features, speaker embedding)
  int hidden = 192;
  int layers = 3;
  int heads = 4;
  int v_sem = 64;
  int downsample = 4;
  int fuse_hidden = 256;
  float fusion_prob = 0.5f;
  int t_feats = 32;
  int ode_steps = 16;
  // `velocity` trains the net to predict the transport field x1 - x0;
  // `reconstruction` trains it to predict the clean mel directly (generation
  // then becomes a single pass from noise).
  enum class LossTarget { kVelocity, kReconstruction };
  LossTarget loss_target = LossTarget::kVelocity;
  float prompt_dropout = 0.3f;
  float ode_convergence_tol = 0.5f;  // mean |mel(steps) - mel(2*steps)| bound for trained nets
  uint64_t seed = 21;
};

// Final semantic representation: MLP over token embeddings, enriched with the
// sequence model's final-layer latents when the fusion gate is on.
struct FusedSemantic {
  Value q_fin;  // tokens x dim
  bool fused_flag = false;
};

struct S2MModel {
  S2MConfig cfg;
  Value sem_embed;  // v_sem x dim
  nn::Linear fuse1, fuse2;
  nn::Linear in_proj;  // (d_mel + dim + dim + 1 + t_feats) -> hidden
  struct Block {
    Value ln1_g, ln1_b, ln2_g, ln2_b;
    nn::Linear wq, wk, wv, wo, ff1, ff2, time_proj;
  };
  std::vector<Block> blocks;
  Value final_ln_g, final_ln_b;
  nn::Linear out_proj;  // hidden -> d_mel

  S2MModel() = default;
  explicit S2MModel(const S2MConfig& cfg);

  nn::ParamMap params() const;
  Value token_features(const std::vector<int>& tokens) const;  // sem_embed rows
};

// Explicit-gate form; `h_gpt` is ignored when the flag is off.
FusedSemantic fuse_latents(const S2MModel& model, const Value& h_gpt, const Value& q_sem,
                           bool fuse);
// Training form: the gate is a Bernoulli(fusion_prob) draw from `rng`.
FusedSemantic fuse_latents(const S2MModel& model, const Value& h_gpt, const Value& q_sem,
                           Rng& rng);

// Token-rate (1 row per token) to frame-rate (downsample rows per token).
Value upsample_tokens(const Value& token_feat, int downsample);

Mat time_features(double t, int dims);

// Velocity/denoiser net: prompt frames are prefix-concatenated on the time
// axis with a flag channel; output covers only the target rows.
Value predict_field(const S2MModel& model, const Mat& x_t, double t, const Mat& prompt_mel,
                    const Value& prompt_feat, const Value& target_feat, const Value& c);

// Mean absolute deviation over all entries; throws on shape mismatch.
double l1_loss(const Mat& pred, const Mat& tar);

// Pure loss form used both by training and by oracle tests: L1 between the
// prediction and the flow target for (x0, x1) at interpolation time t.
Value cfm_loss_given_pred(const Value& pred, const Mat& x0, const Mat& x1,
                          S2MConfig::LossTarget target);

struct CfmStepResult {
  Value loss;
  double t = 0.0;
  bool prompt_dropped = false;
};

// One conditional flow-matching step: draws t ~ U[0,1] and x0 ~ N(0,I),
// forms x_t = (1-t) x0 + t x1, and scores the predicted field against the
// transport target. Throws if the loss turns non-finite.
CfmStepResult cfm_train_step(const S2MModel& model, const Mat& prompt_mel, const Mat& target_mel,
                             const Value& target_feat, const Value& prompt_feat, const Value& c,
                             Rng& rng);

// Euler integration from t=0 to t=1 with double-precision state accumulation,
// so constant fields integrate exactly regardless of the step count.
Mat integrate_ode(const Mat& x0, const std::function<Mat(const Mat&, double)>& field, int steps);

Mat generate_mel(const S2MModel& model, const Value& target_feat, const Value& prompt_feat,
                 const Value& c, const Mat& prompt_mel, int n_frames, int steps, Rng& rng);

struct S2MTrainConfig {
  int steps = 2500;
  int batch = 2;
  float lr = 1e-3f;
  int min_split_tokens = 2;
  float grad_clip = 1.0f;
  uint64_t seed = 31;
  int log_every = 0;
};

struct S2MTrainStats {
  std::vector<double> losses;
};

// Single-stage training over utterances split into prompt/target segments;
// fusion inputs come from the frozen sequence model's teacher-forced latents.
S2MTrainStats train_s2m(const corpus::Corpus& corpus, const codec::CodecModel& codec_model,
                        const t2s::T2SModel& t2s_model, const cond::SpeakerConditioner& speaker,
                        const cond::EmotionConditioner& emotion, S2MModel& model,
                        const S2MTrainConfig& cfg);

}  // namespace dtts::s2m
