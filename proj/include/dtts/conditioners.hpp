#pragma once

#include "dtts/nn.hpp"

#include <string>

namespace dtts::cond {

using ad::Value;

struct CondConfig {
  int d_mel = 80;
  int dim = 128;    // output width, shared with the sequence model
  int hidden = 64;  // internal trunk width
  int pos_feats = 16;
  uint64_t seed = 7;
};

// Attention pooling to a single vector: one learned query scores pointwise
// frame projections, with a sinusoidal position term in the logits so frame
// order matters. Values are pointwise, so forcing uniform weights reduces the
// pool to a plain mean of projected frames.
struct SpeakerConditioner {
  CondConfig cfg;
  nn::Linear value_proj;  // d_mel -> dim
  nn::Linear key_proj;    // d_mel -> hidden
  Value query;            // 1 x hidden
  Value pos_gain;         // 1 x pos_feats

  SpeakerConditioner() = default;
  explicit SpeakerConditioner(const CondConfig& cfg);

  Value embed(const Mat& mel, bool force_uniform_weights = false) const;
  nn::ParamMap params() const;
};

// Same pooling head on top of a small convolution + self-attention trunk.
struct EmotionConditioner {
  CondConfig cfg;
  nn::Linear in_proj;  // d_mel -> hidden
  Value conv_kernel;   // 3 x hidden, depthwise
  nn::Linear conv_pw;  // hidden -> hidden
  Value ln1_g, ln1_b;
  nn::Linear attn_q, attn_k, attn_v, attn_o;
  Value ln2_g, ln2_b;
  nn::Linear key_proj;  // hidden -> hidden
  Value query;          // 1 x hidden
  Value pos_gain;       // 1 x pos_feats
  nn::Linear out_proj;  // hidden -> dim

  EmotionConditioner() = default;
  explicit EmotionConditioner(const CondConfig& cfg);

  Value embed(const Mat& mel) const;
  nn::ParamMap params() const;
};

// Posterior over training speakers from an emotion embedding.
struct SpeakerClassifier {
  int n_speakers = 0;
  nn::Linear fc1;  // dim -> hidden
  nn::Linear fc2;  // hidden -> n_speakers

  SpeakerClassifier() = default;
  SpeakerClassifier(const CondConfig& cfg, int n_speakers);

  Value posterior(const Value& e) const;  // 1 x n_speakers on the simplex
  nn::ParamMap params() const;
};

}  // namespace dtts::cond
