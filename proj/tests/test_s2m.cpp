#include "dtts/s2m.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>

using namespace dtts;

namespace {

s2m::S2MConfig tiny_cfg(int layers = 2) {
  s2m::S2MConfig cfg;
  cfg.d_mel = 6;
  cfg.dim = 8;
  cfg.hidden = 16;
  cfg.layers = layers;
  cfg.heads = 2;
  cfg.v_sem = 12;
  cfg.downsample = 2;
  cfg.fuse_hidden = 12;
  cfg.t_feats = 8;
  cfg.prompt_dropout = 0.0f;
  return cfg;
}

}  // namespace

TEST_CASE("l1_loss hand cases and metric properties") {
  SUBCASE("hand values") {
    Mat a = Mat::Zero(2, 2), b = Mat::Zero(2, 2);
    CHECK(s2m::l1_loss(a, b) == doctest::Approx(0.0));
    b.setConstant(1.0f);
    CHECK(s2m::l1_loss(a, b) == doctest::Approx(1.0));
    Mat p(2, 3), t(2, 3);
    t.setZero();
    p << 0, 1, 2, 3, 4, 5;  // |diff| = {0..5}, mean = 15/6
    CHECK(s2m::l1_loss(p, t) == doctest::Approx(2.5));
  }
  SUBCASE("Eq-form 2x2 case: pred = target + [[1,-1],[2,0]]") {
    Mat tar(2, 2);
    tar << 3, -1, 0, 7;
    Mat delta(2, 2);
    delta << 1, -1, 2, 0;
    Mat pred = tar + delta;
    CHECK(s2m::l1_loss(pred, tar) == doctest::Approx(1.0));
  }
  SUBCASE("metric properties on random pairs") {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
      Mat a = randn(rng, 3, 4, 1.0f);
      Mat b = randn(rng, 3, 4, 1.0f);
      Mat c = randn(rng, 3, 4, 1.0f);
      const double ab = s2m::l1_loss(a, b);
      CHECK(ab >= 0.0);
      CHECK(ab == doctest::Approx(s2m::l1_loss(b, a)));
      CHECK(s2m::l1_loss(a, a) == doctest::Approx(0.0));
      CHECK(s2m::l1_loss(a, c) <= ab + s2m::l1_loss(b, c) + 1e-6);
      if (ab == 0.0) CHECK(a == b);
    }
  }
  SUBCASE("shape mismatch errors") {
    CHECK_THROWS_AS(s2m::l1_loss(Mat::Zero(2, 2), Mat::Zero(3, 2)), std::runtime_error);
  }
}

TEST_CASE("fuse_latents gates the decoder latents") {
  s2m::S2MModel model(tiny_cfg());
  Rng rng(2);
  Mat h = randn(rng, 4, 8, 1.0f);
  Mat q = randn(rng, 4, 8, 1.0f);

  SUBCASE("flag off ignores the latents entirely") {
    auto off = s2m::fuse_latents(model, ad::constant(h), ad::constant(q), false);
    Mat h2 = h;
    h2.array() += 10.0f;
    auto off2 = s2m::fuse_latents(model, ad::constant(h2), ad::constant(q), false);
    CHECK(off.q_fin->val == off2.q_fin->val);
    CHECK(!off.fused_flag);
  }
  SUBCASE("zero latents fused equals unfused exactly") {
    auto on = s2m::fuse_latents(model, ad::constant(Mat::Zero(4, 8)), ad::constant(q), true);
    auto off = s2m::fuse_latents(model, ad::constant(h), ad::constant(q), false);
    CHECK(on.q_fin->val == off.q_fin->val);
  }
  SUBCASE("random gate frequency is 0.50 within the binomial bound") {
    Rng coin(77);
    int fused = 0;
    const int n = 10000;
    for (int i = 0; i < n; ++i)
      if (s2m::fuse_latents(model, ad::constant(h), ad::constant(q), coin).fused_flag) ++fused;
    CHECK(std::abs(double(fused) / n - 0.5) < 0.02);
  }
  SUBCASE("shape mismatch errors when fusing") {
    CHECK_THROWS_AS(
        s2m::fuse_latents(model, ad::constant(Mat::Zero(3, 8)), ad::constant(q), true),
        std::runtime_error);
  }
}

TEST_CASE("cfm loss oracle cases") {
  Rng rng(3);
  Mat x0 = randn(rng, 3, 4, 1.0f);
  Mat x1 = randn(rng, 3, 4, 1.0f);

  SUBCASE("prediction equal to the transport target gives zero loss") {
    Mat perfect = x1 - x0;
    auto loss = s2m::cfm_loss_given_pred(ad::constant(perfect), x0, x1,
                                         s2m::S2MConfig::LossTarget::kVelocity);
    CHECK(double(loss->scalar()) == doctest::Approx(0.0));
  }
  SUBCASE("zero prediction scores the mean absolute transport") {
    auto loss = s2m::cfm_loss_given_pred(ad::constant(Mat::Zero(3, 4)), x0, x1,
                                         s2m::S2MConfig::LossTarget::kVelocity);
    CHECK(double(loss->scalar()) == doctest::Approx(s2m::l1_loss(Mat::Zero(3, 4), x1 - x0)));
  }
  SUBCASE("reconstruction target scores against the clean mel") {
    auto loss = s2m::cfm_loss_given_pred(ad::constant(x1), x0, x1,
                                         s2m::S2MConfig::LossTarget::kReconstruction);
    CHECK(double(loss->scalar()) == doctest::Approx(0.0));
  }
}

TEST_CASE("cfm_train_step parameter gradients match finite differences") {
  // 2-layer toy network, fixed rng stream per evaluation.
  s2m::S2MModel model(tiny_cfg(2));
  Rng rng(4);
  Mat prompt = randn(rng, 4, 6, 1.0f);
  Mat target = randn(rng, 6, 6, 1.0f);
  std::vector<int> p_toks = {1, 2};
  std::vector<int> t_toks = {3, 4, 5};
  Mat c_val = randn(rng, 1, 8, 1.0f);

  auto eval_loss = [&](uint64_t seed) {
    Rng step_rng(seed);
    auto p_feat = s2m::upsample_tokens(model.token_features(p_toks), 2);
    auto t_feat = s2m::upsample_tokens(model.token_features(t_toks), 2);
    return s2m::cfm_train_step(model, prompt, target, t_feat, p_feat, ad::constant(c_val),
                               step_rng);
  };

  auto res = eval_loss(42);
  nn::ParamMap pm = model.params();
  nn::set_trainable(pm, true);
  nn::zero_grads(pm.values());
  ad::backward(res.loss);

  // Spot-check a few parameters across the net.
  for (const auto& name : {"sem_embed", "in_proj.w", "block1.wq.w", "out_proj.b", "fuse1.w"}) {
    ad::Value p = pm.find(name);
    Mat analytic = p->grad.size() != 0 ? p->grad : Mat::Zero(p->val.rows(), p->val.cols());
    int checked = 0;
    for (int r = 0; r < p->val.rows() && checked < 6; ++r) {
      for (int cc = 0; cc < p->val.cols() && checked < 6; cc += std::max(1, p->val.cols() / 3)) {
        const float keep = p->val(r, cc);
        p->val(r, cc) = keep + 1e-3f;
        const double up = double(eval_loss(42).loss->scalar());
        p->val(r, cc) = keep - 1e-3f;
        const double down = double(eval_loss(42).loss->scalar());
        p->val(r, cc) = keep;
        const double fd = (up - down) / 2e-3;
        const double an = double(analytic(r, cc));
        const double denom = std::max({std::abs(fd), std::abs(an)});
        if (denom > 1e-3)
          CHECK(std::abs(fd - an) / denom < 1e-3 * 10);  // 1e-3 relative with float headroom
        else
          CHECK(std::abs(fd - an) < 1e-4);
        ++checked;
      }
    }
  }
}

TEST_CASE("integrate_ode is exact for constant fields at any step count") {
  Rng rng(5);
  Mat x0 = randn(rng, 3, 4, 1.0f);
  Mat delta = Mat::Constant(3, 4, 0.5f);
  Mat y_star = x0 + delta;
  for (int steps : {1, 3, 16, 32, 100}) {
    Mat out = s2m::integrate_ode(x0, [&](const Mat&, double) { return delta; }, steps);
    CHECK(std::memcmp(out.data(), y_star.data(), sizeof(float) * size_t(out.size())) == 0);
  }
  // Doubling steps changes the planted-constant-field output by exactly 0.
  Mat a = s2m::integrate_ode(x0, [&](const Mat&, double) { return delta; }, 16);
  Mat b = s2m::integrate_ode(x0, [&](const Mat&, double) { return delta; }, 32);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * size_t(a.size())) == 0);
  CHECK_THROWS_AS(s2m::integrate_ode(x0, [&](const Mat&, double) { return delta; }, 0),
                  std::runtime_error);
}

TEST_CASE("generate_mel is bitwise deterministic given the seed") {
  s2m::S2MModel model(tiny_cfg());
  Rng rng(6);
  Mat prompt = randn(rng, 4, 6, 1.0f);
  std::vector<int> p_toks = {0, 1};
  std::vector<int> t_toks = {2, 3, 4};
  auto c = ad::constant(randn(rng, 1, 8, 1.0f));

  auto gen = [&](uint64_t seed) {
    Rng g(seed);
    auto p_feat = s2m::upsample_tokens(model.token_features(p_toks), 2);
    auto t_feat = s2m::upsample_tokens(model.token_features(t_toks), 2);
    return s2m::generate_mel(model, t_feat, p_feat, c, prompt, 6, 8, g);
  };
  Mat a = gen(123), b = gen(123), c2 = gen(124);
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * size_t(a.size())) == 0);
  CHECK(a != c2);
}

TEST_CASE("train_s2m overfits a small corpus and beats the noise baseline") {
  corpus::SynthSpec spec;
  spec.seed = 31;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 2;
  spec.frames_min = 16;
  spec.frames_max = 24;
  spec.d_mel = 16;
  auto corpus = corpus::synth_corpus(spec);

  codec::CodecConfig ccfg;
  ccfg.v_sem = 16;
  ccfg.d_code = 6;
  ccfg.d_mel = 16;
  ccfg.downsample = 4;
  ccfg.finetune_steps = 60;
  auto codec_model = codec::train_vq(corpus, ccfg);

  cond::CondConfig kcfg;
  kcfg.d_mel = 16;
  kcfg.dim = 16;
  kcfg.hidden = 8;
  cond::SpeakerConditioner speaker(kcfg);
  cond::EmotionConditioner emotion(kcfg);

  t2s::T2SConfig tcfg;
  tcfg.dim = 16;
  tcfg.layers = 1;
  tcfg.heads = 2;
  tcfg.v_sem = 16;
  tcfg.v_text = 16;
  tcfg.l_speech = 16;
  t2s::T2SModel t2s_model(tcfg);

  s2m::S2MConfig mcfg = tiny_cfg(2);
  mcfg.d_mel = 16;
  mcfg.dim = 16;
  mcfg.v_sem = 16;
  mcfg.downsample = 4;
  mcfg.hidden = 32;
  s2m::S2MModel model(mcfg);

  s2m::S2MTrainConfig train_cfg;
  train_cfg.steps = 400;
  train_cfg.batch = 2;
  train_cfg.min_split_tokens = 1;
  auto stats = s2m::train_s2m(corpus, codec_model, t2s_model, speaker, emotion, model, train_cfg);
  REQUIRE(int(stats.losses.size()) == train_cfg.steps);

  // Mean loss over the last 50 steps must significantly undercut the start.
  double head = 0.0, tail = 0.0;
  for (int i = 0; i < 50; ++i) {
    head += stats.losses[size_t(i)];
    tail += stats.losses[stats.losses.size() - 1 - size_t(i)];
  }
  CHECK(tail < 0.8 * head);

  // Generation beats the Gaussian-noise baseline on mean L1 by 2x.
  const auto& utt = corpus.at(0);
  const int n_tok = int(codec::encode(codec_model, utt.mel).tokens.size());
  const int half = n_tok / 2;
  auto sem = codec::encode(codec_model, utt.mel);
  std::vector<int> p_toks(sem.tokens.begin(), sem.tokens.begin() + half);
  std::vector<int> t_toks(sem.tokens.begin() + half, sem.tokens.end());
  Mat prompt = utt.mel.topRows(half * 4);
  Mat target = utt.mel.middleRows(half * 4, (n_tok - half) * 4);

  auto c = ad::constant(speaker.embed(prompt)->val);
  auto p_feat = s2m::upsample_tokens(
      s2m::fuse_latents(model, ad::constant(Mat::Zero(half, 16)),
                        model.token_features(p_toks), false)
          .q_fin,
      4);
  auto t_feat = s2m::upsample_tokens(
      s2m::fuse_latents(model, ad::constant(Mat::Zero(n_tok - half, 16)),
                        model.token_features(t_toks), false)
          .q_fin,
      4);
  Rng gen_rng(9);
  Mat generated =
      s2m::generate_mel(model, t_feat, p_feat, c, prompt, (n_tok - half) * 4, 16, gen_rng);
  Rng noise_rng(10);
  Mat noise = randn(noise_rng, (n_tok - half) * 4, 16, 1.0f);
  CHECK(s2m::l1_loss(generated, target) < 0.5 * s2m::l1_loss(noise, target));
}
