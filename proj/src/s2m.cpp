#include "dtts/s2m.hpp"

#include <cmath>
#include <iostream>

namespace dtts::s2m {

S2MModel::S2MModel(const S2MConfig& cfg_in) : cfg(cfg_in) {
  Rng rng(cfg.seed);
  sem_embed = ad::param(randn(rng, cfg.v_sem, cfg.dim, 0.1f));
  fuse1 = nn::Linear(rng, cfg.dim, cfg.fuse_hidden);
  fuse2 = nn::Linear(rng, cfg.fuse_hidden, cfg.dim);
  const int in_feats = cfg.d_mel + cfg.dim + cfg.dim + 1 + cfg.t_feats;
  in_proj = nn::Linear(rng, in_feats, cfg.hidden);
  blocks.resize(size_t(cfg.layers));
  const float w_std = 1.0f / std::sqrt(float(cfg.hidden));
  for (auto& b : blocks) {
    b.ln1_g = ad::param(Mat::Ones(1, cfg.hidden));
    b.ln1_b = ad::param(Mat::Zero(1, cfg.hidden));
    b.ln2_g = ad::param(Mat::Ones(1, cfg.hidden));
    b.ln2_b = ad::param(Mat::Zero(1, cfg.hidden));
    b.wq = nn::Linear(rng, cfg.hidden, cfg.hidden, w_std);
    b.wk = nn::Linear(rng, cfg.hidden, cfg.hidden, w_std);
    b.wv = nn::Linear(rng, cfg.hidden, cfg.hidden, w_std);
    b.wo = nn::Linear(rng, cfg.hidden, cfg.hidden, w_std);
    b.ff1 = nn::Linear(rng, cfg.hidden, 4 * cfg.hidden);
    b.ff2 = nn::Linear(rng, 4 * cfg.hidden, cfg.hidden);
    b.time_proj = nn::Linear(rng, cfg.t_feats, cfg.hidden);
  }
  final_ln_g = ad::param(Mat::Ones(1, cfg.hidden));
  final_ln_b = ad::param(Mat::Zero(1, cfg.hidden));
  out_proj = nn::Linear(rng, cfg.hidden, cfg.d_mel);
}

nn::ParamMap S2MModel::params() const {
  nn::ParamMap pm;
  pm.add("sem_embed", sem_embed);
  fuse1.collect(pm, "fuse1");
  fuse2.collect(pm, "fuse2");
  in_proj.collect(pm, "in_proj");
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const auto& b = blocks[i];
    pm.add(p + ".ln1_g", b.ln1_g);
    pm.add(p + ".ln1_b", b.ln1_b);
    pm.add(p + ".ln2_g", b.ln2_g);
    pm.add(p + ".ln2_b", b.ln2_b);
    b.wq.collect(pm, p + ".wq");
    b.wk.collect(pm, p + ".wk");
    b.wv.collect(pm, p + ".wv");
    b.wo.collect(pm, p + ".wo");
    b.ff1.collect(pm, p + ".ff1");
    b.ff2.collect(pm, p + ".ff2");
    b.time_proj.collect(pm, p + ".time_proj");
  }
  pm.add("final_ln_g", final_ln_g);
  pm.add("final_ln_b", final_ln_b);
  out_proj.collect(pm, "out_proj");
  return pm;
}

Value S2MModel::token_features(const std::vector<int>& tokens) const {
  return ad::rows(sem_embed, tokens);
}

FusedSemantic fuse_latents(const S2MModel& model, const Value& h_gpt, const Value& q_sem,
                           bool fuse) {
  if (fuse && (h_gpt->rows() != q_sem->rows() || h_gpt->cols() != q_sem->cols()))
    throw std::runtime_error("fuse_latents: latent/semantic shape mismatch");
  FusedSemantic out;
  out.fused_flag = fuse;
  const Value base = fuse ? ad::add(h_gpt, q_sem) : q_sem;
  out.q_fin = model.fuse2(ad::gelu(model.fuse1(base)));
  return out;
}

FusedSemantic fuse_latents(const S2MModel& model, const Value& h_gpt, const Value& q_sem,
                           Rng& rng) {
  const bool fuse = rng.uniform() < double(model.cfg.fusion_prob);
  return fuse_latents(model, h_gpt, q_sem, fuse);
}

Value upsample_tokens(const Value& token_feat, int downsample) {
  std::vector<int> idx;
  idx.reserve(size_t(token_feat->rows()) * size_t(downsample));
  for (int t = 0; t < token_feat->rows(); ++t)
    for (int r = 0; r < downsample; ++r) idx.push_back(t);
  return ad::rows(token_feat, idx);
}

Mat time_features(double t, int dims) {
  Mat out(1, dims);
  for (int d = 0; d < dims; ++d) {
    const double freq = 1.0 + 3.0 * double(d / 2);
    const double angle = t * freq * 3.14159265358979323846;
    out(0, d) = (d % 2 == 0) ? float(std::sin(angle)) : float(std::cos(angle));
  }
  return out;
}

Value predict_field(const S2MModel& model, const Mat& x_t, double t, const Mat& prompt_mel,
                    const Value& prompt_feat, const Value& target_feat, const Value& c) {
  const auto& cfg = model.cfg;
  const int f_p = int(prompt_mel.rows());
  const int f_t = int(x_t.rows());
  if (prompt_feat->rows() != f_p || target_feat->rows() != f_t)
    throw std::runtime_error("predict_field: feature/frame count mismatch");
  if (int(x_t.cols()) != cfg.d_mel || (f_p > 0 && int(prompt_mel.cols()) != cfg.d_mel))
    throw std::runtime_error("predict_field: mel bin mismatch");
  if (c->rows() != 1 || c->cols() != cfg.dim)
    throw std::runtime_error("predict_field: speaker embedding must be 1 x dim");
  const int f = f_p + f_t;

  Mat x_all(f, cfg.d_mel);
  if (f_p > 0) x_all.topRows(f_p) = prompt_mel;
  x_all.bottomRows(f_t) = x_t;
  Mat flag = Mat::Zero(f, 1);
  flag.bottomRows(f_t).setOnes();
  const Mat t_row = time_features(t, cfg.t_feats);

  Value feat = (f_p > 0) ? ad::concat_rows({prompt_feat, target_feat}) : target_feat;
  Value input = ad::concat_cols({ad::constant(x_all), feat, ad::broadcast_row(c, f),
                                 ad::constant(flag),
                                 ad::broadcast_row(ad::constant(t_row), f)});
  Value h = model.in_proj(input);
  const Value t_const = ad::constant(t_row);
  for (const auto& b : model.blocks) {
    h = ad::add(h, ad::broadcast_row(b.time_proj(t_const), f));
    Value normed = ad::layer_norm(h, b.ln1_g, b.ln1_b);
    h = ad::add(h, nn::multihead_attention(normed, normed, b.wq, b.wk, b.wv, b.wo,
                                           model.cfg.heads, nullptr));
    Value normed2 = ad::layer_norm(h, b.ln2_g, b.ln2_b);
    h = ad::add(h, b.ff2(ad::gelu(b.ff1(normed2))));
  }
  Value out = model.out_proj(ad::layer_norm(h, model.final_ln_g, model.final_ln_b));
  return ad::slice_rows(out, f_p, f_t);
}

double l1_loss(const Mat& pred, const Mat& tar) {
  if (pred.rows() != tar.rows() || pred.cols() != tar.cols())
    throw std::runtime_error("l1_loss: shape mismatch");
  double s = 0.0;
  for (int r = 0; r < pred.rows(); ++r)
    for (int c = 0; c < pred.cols(); ++c) s += std::abs(double(pred(r, c)) - double(tar(r, c)));
  return s / (double(pred.rows()) * double(pred.cols()));
}

Value cfm_loss_given_pred(const Value& pred, const Mat& x0, const Mat& x1,
                          S2MConfig::LossTarget target) {
  Mat flow_target =
      (target == S2MConfig::LossTarget::kVelocity) ? Mat(x1 - x0) : x1;
  return ad::l1_mean(pred, ad::constant(flow_target));
}

CfmStepResult cfm_train_step(const S2MModel& model, const Mat& prompt_mel, const Mat& target_mel,
                             const Value& target_feat, const Value& prompt_feat, const Value& c,
                             Rng& rng) {
  const auto& cfg = model.cfg;
  if (int(target_mel.cols()) != cfg.d_mel)
    throw std::runtime_error("cfm_train_step: target mel bin mismatch");

  CfmStepResult res;
  res.t = rng.uniform();
  Mat x0 = randn(rng, int(target_mel.rows()), cfg.d_mel, 1.0f);
  res.prompt_dropped = rng.uniform() < double(cfg.prompt_dropout);

  Mat x_t = (1.0f - float(res.t)) * x0 + float(res.t) * target_mel;

  Mat prompt = prompt_mel;
  Value p_feat = prompt_feat;
  if (res.prompt_dropped && prompt.rows() > 0) {
    prompt = Mat::Zero(prompt_mel.rows(), prompt_mel.cols());
    p_feat = ad::constant(Mat::Zero(prompt_feat->rows(), prompt_feat->cols()));
  }

  Value pred = predict_field(model, x_t, res.t, prompt, p_feat, target_feat, c);
  res.loss = cfm_loss_given_pred(pred, x0, target_mel, cfg.loss_target);
  if (!std::isfinite(res.loss->scalar()))
    throw std::runtime_error("cfm_train_step: non-finite loss at t=" + std::to_string(res.t) +
                             ", target frames=" + std::to_string(target_mel.rows()));
  return res;
}

Mat integrate_ode(const Mat& x0, const std::function<Mat(const Mat&, double)>& field, int steps) {
  if (steps < 1) throw std::runtime_error("integrate_ode: steps must be >= 1");
  using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  MatD x = x0.cast<double>();
  const double h = 1.0 / double(steps);
  for (int k = 0; k < steps; ++k) {
    const double t = double(k) * h;
    Mat v = field(x.cast<float>(), t);
    x += h * v.cast<double>();
  }
  return x.cast<float>();
}

Mat generate_mel(const S2MModel& model, const Value& target_feat, const Value& prompt_feat,
                 const Value& c, const Mat& prompt_mel, int n_frames, int steps, Rng& rng) {
  if (target_feat->rows() != n_frames)
    throw std::runtime_error("generate_mel: feature rows must equal n_frames");
  Mat x0 = randn(rng, n_frames, model.cfg.d_mel, 1.0f);
  if (model.cfg.loss_target == S2MConfig::LossTarget::kReconstruction) {
    // Direct prediction of the clean mel from noise.
    return predict_field(model, x0, 0.0, prompt_mel, prompt_feat, target_feat, c)->val;
  }
  auto field = [&](const Mat& x, double t) {
    return predict_field(model, x, t, prompt_mel, prompt_feat, target_feat, c)->val;
  };
  return integrate_ode(x0, field, steps);
}

S2MTrainStats train_s2m(const corpus::Corpus& corpus, const codec::CodecModel& codec_model,
                        const t2s::T2SModel& t2s_model, const cond::SpeakerConditioner& speaker,
                        const cond::EmotionConditioner& emotion, S2MModel& model,
                        const S2MTrainConfig& cfg) {
  corpus.validate(false);
  const int ds = model.cfg.downsample;

  nn::ParamMap pm = model.params();
  nn::set_trainable(pm, true);
  std::vector<Value> trainables = pm.values();
  nn::AdamW opt;
  opt.lr = cfg.lr;
  Rng rng(cfg.seed);

  S2MTrainStats stats;
  const float inv_batch = 1.0f / float(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    double step_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& utt = corpus.at(rng.uniform_int(0, corpus.size() - 1));
      auto sem = codec::encode(codec_model, utt.mel);
      const int n_tok = int(sem.tokens.size());
      if (n_tok < 2 * cfg.min_split_tokens)
        throw std::runtime_error("train_s2m: utterance too short for the split");

      // Frame split snapped down to a token boundary.
      auto split = corpus::split_prompt_target(utt.mel, rng, cfg.min_split_tokens * ds);
      int k_tok = split.split_frame / ds;
      k_tok = std::max(cfg.min_split_tokens, std::min(k_tok, n_tok - cfg.min_split_tokens));
      const Mat prompt_mel = utt.mel.topRows(k_tok * ds);
      const Mat target_mel = utt.mel.middleRows(k_tok * ds, (n_tok - k_tok) * ds);

      // Final-layer latents from the frozen sequence model, detached.
      Value c_live = speaker.embed(prompt_mel);
      Value c = ad::constant(c_live->val);
      std::optional<Value> e;
      if (t2s_model.emotion_enabled) e = ad::constant(emotion.embed(utt.mel)->val);
      auto in_seq = t2s_model.assemble(c, e, t2s_model.duration_embedding(n_tok),
                                       utt.text_tokens, sem.tokens);
      auto fwd = t2s_model.forward_teacher_forced(in_seq);
      Mat h_gpt_all = fwd.h_gpt->val;  // (n_tok + 1) x dim, rows align to tokens

      std::vector<int> target_tokens(sem.tokens.begin() + k_tok, sem.tokens.end());
      std::vector<int> prompt_tokens(sem.tokens.begin(), sem.tokens.begin() + k_tok);
      Value h_target = ad::constant(Mat(h_gpt_all.middleRows(k_tok, n_tok - k_tok)));

      FusedSemantic fused =
          fuse_latents(model, h_target, model.token_features(target_tokens), rng);
      FusedSemantic prompt_plain = fuse_latents(
          model, ad::constant(Mat::Zero(k_tok, model.cfg.dim)),
          model.token_features(prompt_tokens), false);

      Value target_feat = upsample_tokens(fused.q_fin, ds);
      Value prompt_feat = upsample_tokens(prompt_plain.q_fin, ds);

      auto res = cfm_train_step(model, prompt_mel, target_mel, target_feat, prompt_feat, c, rng);
      step_loss += double(res.loss->scalar());
      ad::backward(ad::scale(res.loss, inv_batch));
    }
    nn::clip_grad_norm(trainables, double(cfg.grad_clip));
    opt.step(trainables);
    nn::zero_grads(trainables);
    stats.losses.push_back(step_loss / cfg.batch);
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      std::cerr << "[s2m] step " << (step + 1) << "/" << cfg.steps << " loss "
                << stats.losses.back() << "\n";
  }
  return stats;
}

}  // namespace dtts::s2m
