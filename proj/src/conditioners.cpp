#include "dtts/conditioners.hpp"

namespace dtts::cond {

namespace {

// Pooled = softmax(key-similarity + positional bias) weighted sum of values.
Value attention_pool(const Value& values, const Value& keys, const Value& query,
                     const Value& pos_gain, int pos_feats, bool force_uniform) {
  const int frames = values->rows();
  Value logits;
  if (force_uniform) {
    logits = ad::constant(Mat::Zero(1, frames));
  } else {
    Value sim = ad::matmul(query, ad::transpose(keys));  // 1 x frames
    const Mat pos = nn::sinusoid_features(frames, pos_feats);
    Value pos_bias = ad::matmul(pos_gain, ad::transpose(ad::constant(pos)));
    logits = ad::add(ad::scale(sim, 1.0f / std::sqrt(float(keys->cols()))), pos_bias);
  }
  Value weights = ad::softmax_rows(logits);
  return ad::matmul(weights, values);  // 1 x value width
}

}  // namespace

SpeakerConditioner::SpeakerConditioner(const CondConfig& cfg_in) : cfg(cfg_in) {
  Rng rng(cfg.seed);
  value_proj = nn::Linear(rng, cfg.d_mel, cfg.dim);
  key_proj = nn::Linear(rng, cfg.d_mel, cfg.hidden);
  query = ad::param(randn(rng, 1, cfg.hidden, 0.5f));
  pos_gain = ad::param(Mat::Zero(1, cfg.pos_feats));
}

Value SpeakerConditioner::embed(const Mat& mel, bool force_uniform_weights) const {
  if (mel.rows() < 1) throw std::runtime_error("speaker conditioner: empty mel");
  Value x = ad::constant(mel);
  Value values = value_proj(x);
  Value keys = key_proj(x);
  return attention_pool(values, keys, query, pos_gain, cfg.pos_feats, force_uniform_weights);
}

nn::ParamMap SpeakerConditioner::params() const {
  nn::ParamMap pm;
  value_proj.collect(pm, "value_proj");
  key_proj.collect(pm, "key_proj");
  pm.add("query", query);
  pm.add("pos_gain", pos_gain);
  return pm;
}

EmotionConditioner::EmotionConditioner(const CondConfig& cfg_in) : cfg(cfg_in) {
  Rng rng(cfg.seed + 1);
  in_proj = nn::Linear(rng, cfg.d_mel, cfg.hidden);
  conv_kernel = ad::param(randn(rng, 3, cfg.hidden, 0.3f));
  conv_pw = nn::Linear(rng, cfg.hidden, cfg.hidden);
  ln1_g = ad::param(Mat::Ones(1, cfg.hidden));
  ln1_b = ad::param(Mat::Zero(1, cfg.hidden));
  attn_q = nn::Linear(rng, cfg.hidden, cfg.hidden);
  attn_k = nn::Linear(rng, cfg.hidden, cfg.hidden);
  attn_v = nn::Linear(rng, cfg.hidden, cfg.hidden);
  attn_o = nn::Linear(rng, cfg.hidden, cfg.hidden);
  ln2_g = ad::param(Mat::Ones(1, cfg.hidden));
  ln2_b = ad::param(Mat::Zero(1, cfg.hidden));
  key_proj = nn::Linear(rng, cfg.hidden, cfg.hidden);
  query = ad::param(randn(rng, 1, cfg.hidden, 0.5f));
  pos_gain = ad::param(Mat::Zero(1, cfg.pos_feats));
  out_proj = nn::Linear(rng, cfg.hidden, cfg.dim);
}

Value EmotionConditioner::embed(const Mat& mel) const {
  if (mel.rows() < 1) throw std::runtime_error("emotion conditioner: empty mel");
  Value h = in_proj(ad::constant(mel));
  // Conformer-style: depthwise conv + pointwise, then self-attention, both residual.
  Value conv = ad::gelu(conv_pw(ad::conv1d_depthwise(ad::layer_norm(h, ln1_g, ln1_b), conv_kernel)));
  h = ad::add(h, conv);
  Value normed = ad::layer_norm(h, ln2_g, ln2_b);
  Value attn = nn::multihead_attention(normed, normed, attn_q, attn_k, attn_v, attn_o, 1, nullptr);
  h = ad::add(h, attn);
  Value pooled = attention_pool(h, key_proj(h), query, pos_gain, cfg.pos_feats, false);
  return out_proj(pooled);
}

nn::ParamMap EmotionConditioner::params() const {
  nn::ParamMap pm;
  in_proj.collect(pm, "in_proj");
  pm.add("conv_kernel", conv_kernel);
  conv_pw.collect(pm, "conv_pw");
  pm.add("ln1_g", ln1_g);
  pm.add("ln1_b", ln1_b);
  attn_q.collect(pm, "attn_q");
  attn_k.collect(pm, "attn_k");
  attn_v.collect(pm, "attn_v");
  attn_o.collect(pm, "attn_o");
  pm.add("ln2_g", ln2_g);
  pm.add("ln2_b", ln2_b);
  key_proj.collect(pm, "key_proj");
  pm.add("query", query);
  pm.add("pos_gain", pos_gain);
  out_proj.collect(pm, "out_proj");
  return pm;
}

SpeakerClassifier::SpeakerClassifier(const CondConfig& cfg, int n_spk) : n_speakers(n_spk) {
  Rng rng(cfg.seed + 2);
  fc1 = nn::Linear(rng, cfg.dim, cfg.hidden);
  fc2 = nn::Linear(rng, cfg.hidden, n_spk);
}

Value SpeakerClassifier::posterior(const Value& e) const {
  if (e->cols() != fc1.w->rows())
    throw std::runtime_error("speaker classifier: embedding dimension mismatch");
  return ad::softmax_rows(fc2(ad::tanh_(fc1(e))));
}

nn::ParamMap SpeakerClassifier::params() const {
  nn::ParamMap pm;
  fc1.collect(pm, "fc1");
  fc2.collect(pm, "fc2");
  return pm;
}

}  // namespace dtts::cond
