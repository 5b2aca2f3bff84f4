#pragma once

#include "dtts/autodiff.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace dtts::nn {

using ad::Value;

// Ordered name -> parameter registry; order fixes serialization and checksums.
struct ParamMap {
  std::vector<std::pair<std::string, Value>> items;

  void add(const std::string& name, const Value& v) { items.push_back({name, v}); }
  void merge(const std::string& prefix, const ParamMap& other) {
    for (const auto& [name, v] : other.items) items.push_back({prefix + "." + name, v});
  }
  Value find(const std::string& name) const {
    for (const auto& [n, v] : items)
      if (n == name) return v;
    throw std::logic_error("ParamMap: no parameter named " + name);
  }
  std::vector<Value> values() const {
    std::vector<Value> out;
    out.reserve(items.size());
    for (const auto& [n, v] : items) out.push_back(v);
    return out;
  }
};

uint64_t checksum(const ParamMap& pm);
void save_params(ByteWriter& w, const ParamMap& pm);
void load_params(ByteReader& r, ParamMap& pm);  // shapes must match registration

inline void set_trainable(const ParamMap& pm, bool trainable) {
  for (const auto& [n, v] : pm.items) v->requires_grad = trainable;
}

inline void zero_grads(const std::vector<Value>& params) {
  for (const auto& p : params)
    if (p->grad.size() != 0) p->grad.setZero();
}

// Global-norm gradient clipping; returns the pre-clip norm.
double clip_grad_norm(const std::vector<Value>& params, double max_norm);

struct AdamW {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.0f;

  void step(const std::vector<Value>& params);

 private:
  struct Slot {
    Mat m, v;
  };
  std::map<ad::Node*, Slot> slots_;
  int64_t t_ = 0;
};

// y = x W + b. W is in x out, b is 1 x out.
struct Linear {
  Value w, b;

  Linear() = default;
  Linear(Rng& rng, int in, int out, float w_std = -1.0f) {
    if (w_std < 0.0f) w_std = 1.0f / std::sqrt(float(in));
    w = ad::param(randn(rng, in, out, w_std));
    b = ad::param(Mat::Zero(1, out));
  }
  Value operator()(const Value& x) const { return ad::add(ad::matmul(x, w), b); }
  void collect(ParamMap& pm, const std::string& name) const {
    pm.add(name + ".w", w);
    pm.add(name + ".b", b);
  }
};

// Multi-head attention over a single sequence. `mask` is an additive score
// matrix (0 or -1e9), shared across heads; pass an empty Value for none.
Value multihead_attention(const Value& x_q, const Value& x_kv, const Linear& wq,
                          const Linear& wk, const Linear& wv, const Linear& wo, int n_heads,
                          const Mat* mask);

// Lower-triangular additive causal mask (0 on/below diagonal, -1e9 above).
Mat causal_mask(int n);

// Fixed sinusoidal features, one row per position, `dims` columns.
Mat sinusoid_features(int positions, int dims);

}  // namespace dtts::nn
