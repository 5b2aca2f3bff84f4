#include "dtts/autodiff.hpp"

#include <atomic>
#include <cmath>
#include <unordered_set>

namespace dtts::ad {

namespace {

std::atomic<int64_t> g_log_clamps{0};

Value make_node(Mat val, std::vector<Value> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->val = std::move(val);
  n->parents = std::move(parents);
  for (const auto& p : n->parents) {
    if (p->requires_grad) {
      n->requires_grad = true;
      break;
    }
  }
  if (n->requires_grad) n->backward_fn = std::move(bw);
  return n;
}

void check_same_shape(const Value& a, const Value& b, const char* op) {
  if (a->rows() != b->rows() || a->cols() != b->cols())
    throw std::logic_error(std::string(op) + ": shape mismatch " + std::to_string(a->rows()) + "x" +
                           std::to_string(a->cols()) + " vs " + std::to_string(b->rows()) + "x" +
                           std::to_string(b->cols()));
}

}  // namespace

int64_t log_clamp_count() { return g_log_clamps.load(); }

Value constant(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  return n;
}

Value param(Mat m) {
  auto n = std::make_shared<Node>();
  n->val = std::move(m);
  n->requires_grad = true;
  n->is_param = true;
  return n;
}

void backward(const Value& loss) {
  if (loss->rows() != 1 || loss->cols() != 1)
    throw std::logic_error("backward: loss must be 1x1");
  if (!loss->requires_grad) return;

  // Iterative post-order topological sort over nodes that need gradients.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  stack.push_back({loss.get(), 0});
  visited.insert(loss.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && !visited.count(p)) {
        visited.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss->g()(0, 0) += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() != 0) n->backward_fn(*n);
  }
}

Value add(const Value& a, const Value& b) {
  if (b->rows() == 1 && a->rows() > 1 && a->cols() == b->cols()) {
    Mat out = a->val.rowwise() + b->val.row(0);
    return make_node(std::move(out), {a, b}, [](Node& n) {
      auto& a = *n.parents[0];
      auto& b = *n.parents[1];
      if (a.requires_grad) a.g() += n.grad;
      if (b.requires_grad) b.g().row(0) += n.grad.colwise().sum();
    });
  }
  check_same_shape(a, b, "add");
  return make_node(a->val + b->val, {a, b}, [](Node& n) {
    for (auto& p : n.parents)
      if (p->requires_grad) p->g() += n.grad;
  });
}

Value sub(const Value& a, const Value& b) {
  check_same_shape(a, b, "sub");
  return make_node(a->val - b->val, {a, b}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
    if (n.parents[1]->requires_grad) n.parents[1]->g() -= n.grad;
  });
}

Value mul(const Value& a, const Value& b) {
  check_same_shape(a, b, "mul");
  return make_node(a->val.cwiseProduct(b->val), {a, b}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.g() += n.grad.cwiseProduct(b.val);
    if (b.requires_grad) b.g() += n.grad.cwiseProduct(a.val);
  });
}

Value scale(const Value& a, float s) {
  return make_node(a->val * s, {a}, [s](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad * s;
  });
}

Value matmul(const Value& a, const Value& b) {
  if (a->cols() != b->rows()) throw std::logic_error("matmul: inner dim mismatch");
  return make_node(a->val * b->val, {a, b}, [](Node& n) {
    auto& a = *n.parents[0];
    auto& b = *n.parents[1];
    if (a.requires_grad) a.g() += n.grad * b.val.transpose();
    if (b.requires_grad) b.g() += a.val.transpose() * n.grad;
  });
}

Value transpose(const Value& a) {
  return make_node(a->val.transpose(), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad.transpose();
  });
}

Value rows(const Value& table, std::vector<int> idx) {
  for (int i : idx)
    if (i < 0 || i >= table->rows())
      throw std::runtime_error("rows: index " + std::to_string(i) + " out of range [0, " +
                               std::to_string(table->rows()) + ")");
  Mat out(int(idx.size()), table->cols());
  for (size_t r = 0; r < idx.size(); ++r) out.row(int(r)) = table->val.row(idx[r]);
  return make_node(std::move(out), {table}, [idx](Node& n) {
    auto& t = *n.parents[0];
    if (!t.requires_grad) return;
    auto& g = t.g();
    for (size_t r = 0; r < idx.size(); ++r) g.row(idx[r]) += n.grad.row(int(r));
  });
}

Value slice_rows(const Value& a, int start, int n) {
  if (start < 0 || start + n > a->rows()) throw std::logic_error("slice_rows: out of range");
  return make_node(a->val.middleRows(start, n), {a}, [start, n](Node& nd) {
    if (nd.parents[0]->requires_grad) nd.parents[0]->g().middleRows(start, n) += nd.grad;
  });
}

Value slice_cols(const Value& a, int start, int n) {
  if (start < 0 || start + n > a->cols()) throw std::logic_error("slice_cols: out of range");
  return make_node(a->val.middleCols(start, n), {a}, [start, n](Node& nd) {
    if (nd.parents[0]->requires_grad) nd.parents[0]->g().middleCols(start, n) += nd.grad;
  });
}

Value concat_rows(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::logic_error("concat_rows: empty");
  int total = 0;
  const int cols = parts[0]->cols();
  for (const auto& p : parts) {
    if (p->cols() != cols) throw std::logic_error("concat_rows: col mismatch");
    total += p->rows();
  }
  Mat out(total, cols);
  int r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p->rows()) = p->val;
    r += p->rows();
  }
  return make_node(std::move(out), parts, [](Node& n) {
    int r = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->g() += n.grad.middleRows(r, p->rows());
      r += p->rows();
    }
  });
}

Value concat_cols(const std::vector<Value>& parts) {
  if (parts.empty()) throw std::logic_error("concat_cols: empty");
  int total = 0;
  const int rows_n = parts[0]->rows();
  for (const auto& p : parts) {
    if (p->rows() != rows_n) throw std::logic_error("concat_cols: row mismatch");
    total += p->cols();
  }
  Mat out(rows_n, total);
  int c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p->cols()) = p->val;
    c += p->cols();
  }
  return make_node(std::move(out), parts, [](Node& n) {
    int c = 0;
    for (auto& p : n.parents) {
      if (p->requires_grad) p->g() += n.grad.middleCols(c, p->cols());
      c += p->cols();
    }
  });
}

Value broadcast_row(const Value& row, int n) {
  if (row->rows() != 1) throw std::logic_error("broadcast_row: expects 1xC");
  Mat out = row->val.replicate(n, 1);
  return make_node(std::move(out), {row}, [](Node& nd) {
    if (nd.parents[0]->requires_grad) nd.parents[0]->g().row(0) += nd.grad.colwise().sum();
  });
}

Value softmax_rows(const Value& a) {
  Mat out(a->rows(), a->cols());
  for (int r = 0; r < a->rows(); ++r) {
    const float mx = a->val.row(r).maxCoeff();
    Eigen::RowVectorXf e = (a->val.row(r).array() - mx).exp();
    out.row(r) = e / e.sum();
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    auto& g = a.g();
    for (int r = 0; r < n.rows(); ++r) {
      const float dot = n.grad.row(r).dot(n.val.row(r));
      g.row(r) += (n.grad.row(r).array() - dot).matrix().cwiseProduct(n.val.row(r));
    }
  });
}

Value log_softmax_rows(const Value& a) {
  Mat out(a->rows(), a->cols());
  for (int r = 0; r < a->rows(); ++r) {
    const float mx = a->val.row(r).maxCoeff();
    double s = 0.0;
    for (int c = 0; c < a->cols(); ++c) s += std::exp(double(a->val(r, c)) - mx);
    const float lse = mx + float(std::log(s));
    out.row(r) = a->val.row(r).array() - lse;
  }
  return make_node(std::move(out), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    auto& g = a.g();
    for (int r = 0; r < n.rows(); ++r) {
      const float gsum = n.grad.row(r).sum();
      g.row(r) += n.grad.row(r) - gsum * n.val.row(r).array().exp().matrix();
    }
  });
}

Value layer_norm(const Value& x, const Value& gain, const Value& bias, float eps) {
  if (gain->rows() != 1 || gain->cols() != x->cols() || bias->rows() != 1 ||
      bias->cols() != x->cols())
    throw std::logic_error("layer_norm: gain/bias must be 1xC");
  const int R = x->rows(), C = x->cols();
  Mat xhat(R, C);
  std::vector<float> inv_std(R);
  for (int r = 0; r < R; ++r) {
    const float mu = x->val.row(r).mean();
    const float var = (x->val.row(r).array() - mu).square().mean();
    inv_std[r] = 1.0f / std::sqrt(var + eps);
    xhat.row(r) = (x->val.row(r).array() - mu) * inv_std[r];
  }
  Mat out = (xhat.array().rowwise() * gain->val.row(0).array()).rowwise() +
            bias->val.row(0).array();
  return make_node(std::move(out), {x, gain, bias},
                   [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& n) {
                     auto& x = *n.parents[0];
                     auto& gain = *n.parents[1];
                     auto& bias = *n.parents[2];
                     const int R = n.rows();
                     if (gain.requires_grad)
                       gain.g().row(0) += (n.grad.cwiseProduct(xhat)).colwise().sum();
                     if (bias.requires_grad) bias.g().row(0) += n.grad.colwise().sum();
                     if (!x.requires_grad) return;
                     auto& g = x.g();
                     for (int r = 0; r < R; ++r) {
                       Eigen::RowVectorXf dy =
                           n.grad.row(r).cwiseProduct(gain.val.row(0));
                       const float m1 = dy.mean();
                       const float m2 = dy.cwiseProduct(xhat.row(r)).mean();
                       g.row(r) += ((dy.array() - m1 - xhat.row(r).array() * m2) * inv_std[r])
                                       .matrix();
                     }
                   });
}

Value gelu(const Value& a) {
  constexpr float kInvSqrt2 = 0.7071067811865475f;
  constexpr float kInvSqrt2Pi = 0.3989422804014327f;
  Mat out = a->val.unaryExpr(
      [&](float v) { return 0.5f * v * (1.0f + std::erf(v * kInvSqrt2)); });
  return make_node(std::move(out), {a}, [=](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    Mat d = a.val.unaryExpr([&](float v) {
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      return cdf + v * pdf;
    });
    a.g() += n.grad.cwiseProduct(d);
  });
}

Value relu(const Value& a) {
  Mat out = a->val.cwiseMax(0.0f);
  return make_node(std::move(out), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    Mat mask = (a.val.array() > 0.0f).cast<float>();
    a.g() += n.grad.cwiseProduct(mask);
  });
}

Value tanh_(const Value& a) {
  Mat out = a->val.array().tanh();
  return make_node(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Mat d = 1.0f - n.val.array().square();
    n.parents[0]->g() += n.grad.cwiseProduct(d);
  });
}

Value sigmoid(const Value& a) {
  Mat out = a->val.unaryExpr([](float v) { return 1.0f / (1.0f + std::exp(-v)); });
  return make_node(std::move(out), {a}, [](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    Mat d = n.val.array() * (1.0f - n.val.array());
    n.parents[0]->g() += n.grad.cwiseProduct(d);
  });
}

Value abs_(const Value& a) {
  Mat out = a->val.cwiseAbs();
  return make_node(std::move(out), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    Mat sgn = a.val.unaryExpr([](float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); });
    a.g() += n.grad.cwiseProduct(sgn);
  });
}

Value log_(const Value& a) {
  Mat out(a->rows(), a->cols());
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c) {
      float v = a->val(r, c);
      if (v < 1e-12f) {
        v = 1e-12f;
        g_log_clamps.fetch_add(1, std::memory_order_relaxed);
      }
      out(r, c) = std::log(v);
    }
  return make_node(std::move(out), {a}, [](Node& n) {
    auto& a = *n.parents[0];
    if (!a.requires_grad) return;
    Mat d = a.val.cwiseMax(1e-12f).cwiseInverse();
    a.g() += n.grad.cwiseProduct(d);
  });
}

Value mean_all(const Value& a) {
  double s = 0.0;
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c) s += a->val(r, c);
  const double inv_n = 1.0 / (double(a->rows()) * double(a->cols()));
  Mat out(1, 1);
  out(0, 0) = float(s * inv_n);
  return make_node(std::move(out), {a}, [inv_n](Node& n) {
    if (n.parents[0]->requires_grad)
      n.parents[0]->g().array() += n.grad(0, 0) * float(inv_n);
  });
}

Value sum_all(const Value& a) {
  double s = 0.0;
  for (int r = 0; r < a->rows(); ++r)
    for (int c = 0; c < a->cols(); ++c) s += a->val(r, c);
  Mat out(1, 1);
  out(0, 0) = float(s);
  return make_node(std::move(out), {a}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g().array() += n.grad(0, 0);
  });
}

Value mean_rows(const Value& a) {
  Mat out = a->val.colwise().mean();
  const float inv_r = 1.0f / float(a->rows());
  return make_node(std::move(out), {a}, [inv_r](Node& n) {
    if (!n.parents[0]->requires_grad) return;
    n.parents[0]->g() += (n.grad.row(0) * inv_r).replicate(n.parents[0]->rows(), 1);
  });
}

Value grl(const Value& x, float lambda) {
  if (lambda < 0.0f) throw std::logic_error("grl: lambda must be non-negative");
  Mat out = x->val;  // bitwise copy
  return make_node(std::move(out), {x}, [lambda](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad * (-lambda);
  });
}

Value straight_through(const Value& z, const Mat& quantized) {
  if (z->rows() != quantized.rows() || z->cols() != quantized.cols())
    throw std::logic_error("straight_through: shape mismatch");
  return make_node(quantized, {z}, [](Node& n) {
    if (n.parents[0]->requires_grad) n.parents[0]->g() += n.grad;
  });
}

Value conv1d_depthwise(const Value& x, const Value& kernel) {
  const int F = x->rows(), C = x->cols(), K = kernel->rows();
  if (kernel->cols() != C) throw std::logic_error("conv1d_depthwise: channel mismatch");
  const int half = K / 2;
  Mat out = Mat::Zero(F, C);
  for (int f = 0; f < F; ++f)
    for (int k = 0; k < K; ++k) {
      const int src = f + k - half;
      if (src < 0 || src >= F) continue;
      out.row(f) += x->val.row(src).cwiseProduct(kernel->val.row(k));
    }
  return make_node(std::move(out), {x, kernel}, [K, half](Node& n) {
    auto& x = *n.parents[0];
    auto& ker = *n.parents[1];
    const int F = n.rows();
    for (int f = 0; f < F; ++f)
      for (int k = 0; k < K; ++k) {
        const int src = f + k - half;
        if (src < 0 || src >= F) continue;
        if (x.requires_grad) x.g().row(src) += n.grad.row(f).cwiseProduct(ker.val.row(k));
        if (ker.requires_grad) ker.g().row(k) += n.grad.row(f).cwiseProduct(x.val.row(src));
      }
  });
}

Value cross_entropy_mean(const Value& logits, const std::vector<int>& targets) {
  const int R = logits->rows(), C = logits->cols();
  if (int(targets.size()) != R) throw std::logic_error("cross_entropy_mean: target count mismatch");
  for (int t : targets)
    if (t < 0 || t >= C) throw std::runtime_error("cross_entropy_mean: target out of range");

  Mat probs(R, C);
  double loss = 0.0;
  for (int r = 0; r < R; ++r) {
    const float mx = logits->val.row(r).maxCoeff();
    double denom = 0.0;
    for (int c = 0; c < C; ++c) denom += std::exp(double(logits->val(r, c)) - mx);
    for (int c = 0; c < C; ++c)
      probs(r, c) = float(std::exp(double(logits->val(r, c)) - mx) / denom);
    double p = double(probs(r, targets[r]));
    if (p < 1e-12) {
      p = 1e-12;
      g_log_clamps.fetch_add(1, std::memory_order_relaxed);
    }
    loss -= std::log(p);
  }
  Mat out(1, 1);
  out(0, 0) = float(loss / R);
  return make_node(std::move(out), {logits},
                   [probs = std::move(probs), targets](Node& n) {
                     auto& lg = *n.parents[0];
                     if (!lg.requires_grad) return;
                     const float s = n.grad(0, 0) / float(n.parents[0]->rows());
                     Mat d = probs;
                     for (int r = 0; r < int(targets.size()); ++r) d(r, targets[r]) -= 1.0f;
                     lg.g() += d * s;
                   });
}

Value l1_mean(const Value& a, const Value& b) {
  check_same_shape(a, b, "l1_mean");
  return mean_all(abs_(sub(a, b)));
}

}  // namespace dtts::ad
