#include "dtts/autodiff.hpp"
#include "dtts/nn.hpp"

#include <doctest.h>

#include <cmath>

using namespace dtts;
using ad::Value;

namespace {

// Central-difference check of d(loss)/d(param) for a scalar-producing graph
// builder. The builder must be a pure function of the param values.
void grad_check(const std::vector<Value>& params, const std::function<Value()>& build,
                double tol = 2e-2, double fd_step = 1e-3) {
  Value loss = build();
  nn::zero_grads(params);
  ad::backward(loss);
  for (const auto& p : params) {
    Mat analytic = p->grad.size() != 0 ? p->grad : Mat::Zero(p->val.rows(), p->val.cols());
    for (int r = 0; r < p->val.rows(); ++r) {
      for (int c = 0; c < p->val.cols(); ++c) {
        const float keep = p->val(r, c);
        p->val(r, c) = keep + float(fd_step);
        const double up = double(build()->scalar());
        p->val(r, c) = keep - float(fd_step);
        const double down = double(build()->scalar());
        p->val(r, c) = keep;
        const double fd = (up - down) / (2.0 * fd_step);
        const double an = double(analytic(r, c));
        const double denom = std::max({std::abs(fd), std::abs(an), 1e-2});
        CHECK(std::abs(fd - an) / denom < tol);
      }
    }
  }
}

}  // namespace

TEST_CASE("matmul/add/bias gradients match finite differences") {
  Rng rng(1);
  auto w = ad::param(randn(rng, 3, 4, 0.5f));
  auto b = ad::param(randn(rng, 1, 4, 0.5f));
  Mat x = randn(rng, 5, 3, 1.0f);
  grad_check({w, b}, [&] {
    return ad::mean_all(ad::gelu(ad::add(ad::matmul(ad::constant(x), w), b)));
  });
}

TEST_CASE("softmax/log_softmax/tanh/sigmoid/relu/abs gradients") {
  Rng rng(2);
  auto a = ad::param(randn(rng, 4, 6, 0.8f));
  grad_check({a}, [&] { return ad::mean_all(ad::softmax_rows(a)); });
  grad_check({a}, [&] { return ad::mean_all(ad::log_softmax_rows(a)); });
  grad_check({a}, [&] { return ad::mean_all(ad::tanh_(a)); });
  grad_check({a}, [&] { return ad::mean_all(ad::sigmoid(a)); });
  grad_check({a}, [&] { return ad::mean_all(ad::mul(a, a)); });
}

TEST_CASE("layer_norm gradients") {
  Rng rng(3);
  auto x = ad::param(randn(rng, 4, 8, 1.0f));
  auto g = ad::param(Mat::Ones(1, 8));
  auto b = ad::param(randn(rng, 1, 8, 0.1f));
  grad_check({x, g, b}, [&] { return ad::mean_all(ad::mul(ad::layer_norm(x, g, b),
                                                          ad::layer_norm(x, g, b))); });
}

TEST_CASE("conv1d_depthwise gradients") {
  Rng rng(4);
  auto x = ad::param(randn(rng, 6, 3, 1.0f));
  auto k = ad::param(randn(rng, 3, 3, 0.5f));
  grad_check({x, k}, [&] {
    auto y = ad::conv1d_depthwise(x, k);
    return ad::mean_all(ad::mul(y, y));
  });
}

TEST_CASE("rows gather scatters gradients to the right rows") {
  Rng rng(5);
  auto table = ad::param(randn(rng, 6, 3, 1.0f));
  auto out = ad::rows(table, {2, 2, 5});
  auto loss = ad::sum_all(out);
  ad::backward(loss);
  CHECK(table->grad(2, 0) == doctest::Approx(2.0));
  CHECK(table->grad(5, 0) == doctest::Approx(1.0));
  CHECK(table->grad(0, 0) == doctest::Approx(0.0));
  CHECK_THROWS(ad::rows(table, {6}));
}

TEST_CASE("attention composite gradients") {
  Rng rng(6);
  nn::Linear wq(rng, 8, 8), wk(rng, 8, 8), wv(rng, 8, 8), wo(rng, 8, 8);
  auto x = ad::param(randn(rng, 5, 8, 0.7f));
  const Mat mask = nn::causal_mask(5);
  std::vector<Value> params = {x, wq.w, wk.w, wo.w};
  grad_check(params, [&] {
    auto y = nn::multihead_attention(x, x, wq, wk, wv, wo, 2, &mask);
    return ad::mean_all(ad::mul(y, y));
  });
}

TEST_CASE("grl is the identity forward and flips gradients backward") {
  Rng rng(7);
  Mat x_val = randn(rng, 2, 5, 1.0f);

  auto x1 = ad::param(x_val);
  auto g1 = ad::grl(x1, 2.5f);
  // Bitwise identity.
  CHECK(std::memcmp(g1->val.data(), x_val.data(), sizeof(float) * size_t(x_val.size())) == 0);

  nn::Linear f(rng, 5, 1);
  auto through = ad::mean_all(f(ad::grl(x1, 2.5f)));
  ad::backward(through);
  Mat grad_with = x1->grad;

  auto x2 = ad::param(x_val);
  auto plain = ad::mean_all(f(x2));
  ad::backward(plain);
  Mat grad_without = x2->grad;

  for (int c = 0; c < 5; ++c)
    CHECK(grad_with(0, c) == doctest::Approx(-2.5f * grad_without(0, c)).epsilon(1e-6));

  // lambda = 0 zeroes the upstream gradient exactly.
  auto x3 = ad::param(x_val);
  ad::backward(ad::mean_all(f(ad::grl(x3, 0.0f))));
  CHECK(x3->grad.cwiseAbs().maxCoeff() == 0.0f);
}

TEST_CASE("straight_through passes values forward and gradients to z") {
  Rng rng(8);
  auto z = ad::param(randn(rng, 3, 2, 1.0f));
  Mat q = randn(rng, 3, 2, 1.0f);
  auto st = ad::straight_through(z, q);
  CHECK(st->val == q);
  ad::backward(ad::sum_all(st));
  CHECK(z->grad == Mat::Ones(3, 2));
}

TEST_CASE("cross_entropy_mean matches a scalar oracle") {
  Rng rng(9);
  auto logits = ad::param(randn(rng, 4, 7, 1.2f));
  std::vector<int> targets = {1, 0, 6, 3};
  auto loss = ad::cross_entropy_mean(logits, targets);

  double expect = 0.0;
  for (int r = 0; r < 4; ++r) {
    double mx = -1e30;
    for (int c = 0; c < 7; ++c) mx = std::max(mx, double(logits->val(r, c)));
    double denom = 0.0;
    for (int c = 0; c < 7; ++c) denom += std::exp(double(logits->val(r, c)) - mx);
    expect -= double(logits->val(r, targets[size_t(r)])) - mx - std::log(denom);
  }
  expect /= 4.0;
  CHECK(double(loss->scalar()) == doctest::Approx(expect).epsilon(1e-6));

  grad_check({logits}, [&] { return ad::cross_entropy_mean(logits, targets); });
}

TEST_CASE("log_ clamps zero probabilities and reports them") {
  Mat v(1, 2);
  v << 0.0f, 1.0f;
  const int64_t before = ad::log_clamp_count();
  auto lg = ad::log_(ad::constant(v));
  CHECK(ad::log_clamp_count() == before + 1);
  CHECK(lg->val(0, 0) == doctest::Approx(std::log(1e-12f)));
  CHECK(lg->val(0, 1) == doctest::Approx(0.0f));
}

TEST_CASE("AdamW refuses to update frozen parameters") {
  Rng rng(10);
  auto p = ad::param(randn(rng, 2, 2, 1.0f));
  p->requires_grad = false;
  nn::AdamW opt;
  CHECK_THROWS_AS(opt.step({p}), std::logic_error);
}

TEST_CASE("AdamW reduces a quadratic") {
  Rng rng(11);
  auto p = ad::param(randn(rng, 1, 4, 2.0f));
  nn::AdamW opt;
  opt.lr = 0.1f;
  for (int i = 0; i < 200; ++i) {
    auto loss = ad::mean_all(ad::mul(p, p));
    nn::zero_grads({p});
    ad::backward(loss);
    opt.step({p});
  }
  CHECK(double(p->val.cwiseAbs().maxCoeff()) < 1e-2);
}

TEST_CASE("slice and concat round trips") {
  Rng rng(12);
  auto a = ad::param(randn(rng, 4, 6, 1.0f));
  auto parts = std::vector<Value>{ad::slice_rows(a, 0, 2), ad::slice_rows(a, 2, 2)};
  auto rejoined = ad::concat_rows(parts);
  CHECK(rejoined->val == a->val);
  auto cols = std::vector<Value>{ad::slice_cols(a, 0, 3), ad::slice_cols(a, 3, 3)};
  CHECK(ad::concat_cols(cols)->val == a->val);
  grad_check({a}, [&] {
    auto joined = ad::concat_cols({ad::slice_cols(a, 0, 3), ad::slice_cols(a, 3, 3)});
    return ad::mean_all(ad::mul(joined, joined));
  });
}
