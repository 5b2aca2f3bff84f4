#include "dtts/nn.hpp"

#include <cmath>

namespace dtts::nn {

uint64_t checksum(const ParamMap& pm) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [name, v] : pm.items) {
    h = fnv1a(name, h);
    h = fnv1a(v->val.data(), sizeof(float) * size_t(v->val.size()), h);
  }
  return h;
}

void save_params(ByteWriter& w, const ParamMap& pm) {
  w.put_u32(uint32_t(pm.items.size()));
  for (const auto& [name, v] : pm.items) {
    w.put_str(name);
    w.put_mat(v->val);
  }
}

void load_params(ByteReader& r, ParamMap& pm) {
  const uint32_t n = r.get_u32();
  if (n != pm.items.size())
    throw std::runtime_error("parameter blob has " + std::to_string(n) + " entries, expected " +
                             std::to_string(pm.items.size()));
  for (auto& [name, v] : pm.items) {
    const std::string got = r.get_str();
    if (got != name)
      throw std::runtime_error("parameter order mismatch: got '" + got + "', expected '" + name +
                               "'");
    Mat m = r.get_mat();
    if (m.rows() != v->val.rows() || m.cols() != v->val.cols())
      throw std::runtime_error("parameter '" + name + "' shape mismatch");
    v->val = std::move(m);
  }
}

double clip_grad_norm(const std::vector<Value>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (p->grad.size() == 0) continue;
    sq += double(p->grad.cast<double>().squaredNorm());
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const float s = float(max_norm / norm);
    for (const auto& p : params)
      if (p->grad.size() != 0) p->grad *= s;
  }
  return norm;
}

void AdamW::step(const std::vector<Value>& params) {
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1, float(t_));
  const float bc2 = 1.0f - std::pow(beta2, float(t_));
  for (const auto& p : params) {
    if (!p->requires_grad)
      throw std::logic_error("AdamW::step: attempted update of a frozen parameter");
    if (p->grad.size() == 0) continue;
    auto& slot = slots_[p.get()];
    if (slot.m.size() == 0) {
      slot.m = Mat::Zero(p->val.rows(), p->val.cols());
      slot.v = Mat::Zero(p->val.rows(), p->val.cols());
    }
    slot.m = beta1 * slot.m + (1.0f - beta1) * p->grad;
    slot.v = beta2 * slot.v.array() + (1.0f - beta2) * p->grad.array().square();
    Mat mhat = slot.m / bc1;
    Mat vhat = slot.v / bc2;
    if (weight_decay > 0.0f) p->val -= lr * weight_decay * p->val;
    p->val -= (lr * mhat.array() / (vhat.array().sqrt() + eps)).matrix();
  }
}

Value multihead_attention(const Value& x_q, const Value& x_kv, const Linear& wq,
                          const Linear& wk, const Linear& wv, const Linear& wo, int n_heads,
                          const Mat* mask) {
  const Value q = wq(x_q);
  const Value k = wk(x_kv);
  const Value v = wv(x_kv);
  const int dim = q->cols();
  if (dim % n_heads != 0) throw std::logic_error("attention: dim not divisible by heads");
  const int dh = dim / n_heads;
  const float inv_sqrt = 1.0f / std::sqrt(float(dh));

  std::vector<Value> head_outs;
  head_outs.reserve(n_heads);
  for (int h = 0; h < n_heads; ++h) {
    Value qh = ad::slice_cols(q, h * dh, dh);
    Value kh = ad::slice_cols(k, h * dh, dh);
    Value vh = ad::slice_cols(v, h * dh, dh);
    Value scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), inv_sqrt);
    if (mask != nullptr) scores = ad::add(scores, ad::constant(*mask));
    Value attn = ad::softmax_rows(scores);
    head_outs.push_back(ad::matmul(attn, vh));
  }
  return wo(ad::concat_cols(head_outs));
}

Mat causal_mask(int n) {
  Mat m = Mat::Zero(n, n);
  for (int r = 0; r < n; ++r)
    for (int c = r + 1; c < n; ++c) m(r, c) = -1e9f;
  return m;
}

Mat sinusoid_features(int positions, int dims) {
  Mat out(positions, dims);
  for (int p = 0; p < positions; ++p)
    for (int d = 0; d < dims; ++d) {
      const double rate = std::pow(10000.0, -double(d / 2 * 2) / double(dims));
      const double angle = double(p) * rate;
      out(p, d) = (d % 2 == 0) ? float(std::sin(angle)) : float(std::cos(angle));
    }
  return out;
}

}  // namespace dtts::nn
