#include "dtts/t2s.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>

namespace dtts::t2s {

T2SModel::T2SModel(const T2SConfig& cfg_in) : cfg(cfg_in) {
  Rng rng(cfg.seed);
  tied_table = ad::param(randn(rng, cfg.l_speech, cfg.dim, cfg.tied_init_std));
  text_embed = ad::param(randn(rng, cfg.v_text, cfg.dim, cfg.embed_init_std));
  text_pos = ad::param(randn(rng, cfg.max_text, cfg.dim, cfg.embed_init_std));
  sem_embed = ad::param(randn(rng, cfg.v_sem, cfg.dim, cfg.embed_init_std));
  e_bt = ad::param(randn(rng, 1, cfg.dim, cfg.embed_init_std));
  e_ba = ad::param(randn(rng, 1, cfg.dim, cfg.embed_init_std));
  const float w_std = 1.0f / std::sqrt(float(cfg.dim));
  blocks.resize(size_t(cfg.layers));
  for (auto& b : blocks) {
    b.ln1_g = ad::param(Mat::Ones(1, cfg.dim));
    b.ln1_b = ad::param(Mat::Zero(1, cfg.dim));
    b.ln2_g = ad::param(Mat::Ones(1, cfg.dim));
    b.ln2_b = ad::param(Mat::Zero(1, cfg.dim));
    b.wq = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wk = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wv = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wo = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.ff1 = nn::Linear(rng, cfg.dim, 4 * cfg.dim);
    b.ff2 = nn::Linear(rng, 4 * cfg.dim, cfg.dim);
  }
  final_ln_g = ad::param(Mat::Ones(1, cfg.dim));
  final_ln_b = ad::param(Mat::Zero(1, cfg.dim));
  head = nn::Linear(rng, cfg.dim, cfg.v_sem + 1);
}

nn::ParamMap T2SModel::params() const {
  nn::ParamMap pm;
  pm.add("tied_table", tied_table);
  pm.add("text_embed", text_embed);
  pm.add("text_pos", text_pos);
  pm.add("sem_embed", sem_embed);
  pm.add("e_bt", e_bt);
  pm.add("e_ba", e_ba);
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
  }
  pm.add("final_ln_g", final_ln_g);
  pm.add("final_ln_b", final_ln_b);
  head.collect(pm, "head");
  return pm;
}

Mat::RowXpr T2SModel::duration_row(int t) {
  if (t < 0 || t >= cfg.l_speech) throw std::runtime_error("duration_row: index out of range");
  return tied_table->val.row(t);
}

Mat::RowXpr T2SModel::positional_row(int t) {
  if (t < 0 || t >= cfg.l_speech) throw std::runtime_error("positional_row: index out of range");
  return tied_table->val.row(t);
}

Value T2SModel::duration_embedding(int t) const {
  if (t < 0 || t >= cfg.l_speech)
    throw std::runtime_error("duration_embedding: token count " + std::to_string(t) +
                             " outside [0, " + std::to_string(cfg.l_speech) + ")");
  return ad::rows(tied_table, {t});
}

T2SInputSequence T2SModel::assemble(const Value& c, const std::optional<Value>& e,
                                    const std::optional<Value>& p,
                                    const std::vector<int>& text_tokens,
                                    const std::vector<int>& sem_tokens) const {
  if (c->rows() != 1 || c->cols() != cfg.dim)
    throw std::runtime_error("assemble: speaker embedding must be 1 x dim");
  if (e && !emotion_enabled)
    throw std::runtime_error(
        "assemble: emotion embedding supplied while the model is still in the "
        "speaker-only configuration");
  if (e && ((*e)->rows() != 1 || (*e)->cols() != cfg.dim))
    throw std::runtime_error("assemble: emotion embedding must be 1 x dim");
  if (int(text_tokens.size()) > cfg.max_text)
    throw std::runtime_error("assemble: text longer than max_text");

  T2SInputSequence seq;
  seq.has_emotion = e.has_value();
  seq.p_is_zero = !p.has_value();
  seq.prefix_len = 3 + int(text_tokens.size());
  seq.n_sem_inputs = int(sem_tokens.size());

  const int total = seq.prefix_len + 1 + seq.n_sem_inputs;
  if (total > cfg.context) throw std::runtime_error("assemble: sequence exceeds model context");

  std::vector<Value> parts;
  parts.reserve(5);
  parts.push_back(e ? ad::add(c, *e) : c);
  parts.push_back(p ? *p : ad::constant(Mat::Zero(1, cfg.dim)));
  parts.push_back(e_bt);
  if (!text_tokens.empty()) {
    std::vector<int> pos_idx(text_tokens.size());
    for (size_t i = 0; i < text_tokens.size(); ++i) pos_idx[i] = int(i);
    parts.push_back(ad::add(ad::rows(text_embed, text_tokens), ad::rows(text_pos, pos_idx)));
  }
  // Semantic segment: <BA> at position 0, token y_i at position i+1, every
  // slot carrying its row of the tied table.
  std::vector<int> pos_idx(size_t(seq.n_sem_inputs) + 1);
  for (size_t i = 0; i < pos_idx.size(); ++i) pos_idx[i] = int(i);
  Value sem_part;
  if (sem_tokens.empty()) {
    sem_part = ad::add(e_ba, ad::rows(tied_table, {0}));
  } else {
    Value ids = ad::rows(sem_embed, sem_tokens);
    Value stacked = ad::concat_rows({e_ba, ids});
    sem_part = ad::add(stacked, ad::rows(tied_table, pos_idx));
  }
  parts.push_back(sem_part);
  seq.embedded = ad::concat_rows(parts);
  return seq;
}

T2SModel::Forward T2SModel::forward_from_embedded(const Value& embedded, int prefix_len) const {
  const int s = embedded->rows();
  const Mat mask = nn::causal_mask(s);
  Value h = embedded;
  for (const auto& b : blocks) {
    Value normed = ad::layer_norm(h, b.ln1_g, b.ln1_b);
    Value attn = nn::multihead_attention(normed, normed, b.wq, b.wk, b.wv, b.wo, cfg.heads, &mask);
    h = ad::add(h, attn);
    Value normed2 = ad::layer_norm(h, b.ln2_g, b.ln2_b);
    h = ad::add(h, b.ff2(ad::gelu(b.ff1(normed2))));
  }
  Value hidden = ad::layer_norm(h, final_ln_g, final_ln_b);
  const int n_sem_slots = s - prefix_len;  // <BA> and the semantic inputs
  Value sem_hidden = ad::slice_rows(hidden, prefix_len, n_sem_slots);
  Value logits = head(sem_hidden);
  return {logits, sem_hidden};
}

T2SModel::Forward T2SModel::forward_teacher_forced(const T2SInputSequence& seq) const {
  return forward_from_embedded(seq.embedded, seq.prefix_len);
}

Value ar_loss(const Value& token_logits, const std::vector<int>& targets_with_eos,
              const Value& q_e, float alpha) {
  if (int(targets_with_eos.size()) != token_logits->rows())
    throw std::runtime_error("ar_loss: logits cover " + std::to_string(token_logits->rows()) +
                             " positions but " + std::to_string(targets_with_eos.size()) +
                             " targets were given");
  Value token_term = ad::cross_entropy_mean(token_logits, targets_with_eos);
  if (alpha == 0.0f) return token_term;
  if (q_e->rows() != 1 || q_e->cols() != 1) throw std::runtime_error("ar_loss: q_e must be scalar");
  return ad::add(token_term, ad::scale(ad::log_(q_e), -alpha));
}

Value ar_loss(const Value& token_logits, const std::vector<int>& targets_with_eos, float q_e,
              float alpha) {
  Mat q(1, 1);
  q(0, 0) = q_e;
  return ar_loss(token_logits, targets_with_eos, ad::constant(q), alpha);
}

T2SOutput T2SModel::decode(const Value& c, const std::optional<Value>& e,
                           const DecodeOptions& opts, const std::vector<int>& text_tokens) const {
  const bool strict = opts.mode == DecodeOptions::Mode::kStrict;
  if (strict && !opts.duration)
    throw std::runtime_error("decode: strict mode requires a duration");
  if (opts.duration && (*opts.duration < 0 || *opts.duration >= cfg.l_speech))
    throw std::runtime_error("decode: duration outside [0, l_speech)");
  int max_len = opts.max_len > 0 ? opts.max_len : cfg.l_speech - 1;
  max_len = std::min(max_len, cfg.l_speech - 1);

  std::optional<Value> p;
  if (opts.duration) p = duration_embedding(*opts.duration);
  Rng sampler(opts.sample_seed);

  T2SOutput out;
  std::vector<Mat> hidden_rows;
  std::vector<int> generated;
  const int eos = cfg.eos_id();
  while (true) {
    const int step = int(generated.size());
    if (strict && step == *opts.duration) {
      // Terminator forced at exactly the requested length.
      out.tokens.terminated_eos = true;
      break;
    }
    if (step >= max_len) {
      out.truncated = true;
      if (!opts.duration)
        std::cerr << "[t2s] decode truncated at max_len=" << max_len
                  << " without end-of-sequence\n";
      break;
    }

    T2SInputSequence seq = assemble(c, e, p, text_tokens, generated);
    Forward fwd = forward_teacher_forced(seq);
    Eigen::RowVectorXf logits = fwd.logits->val.row(fwd.logits->rows() - 1);
    if (strict) logits(eos) = -1e30f;  // suppressed before the requested length

    int next;
    if (opts.top_k > 0) {
      std::vector<int> order(size_t(logits.size()));
      for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
      std::partial_sort(order.begin(), order.begin() + opts.top_k, order.end(),
                        [&](int a, int b) { return logits(a) > logits(b); });
      double denom = 0.0;
      std::vector<double> probs(size_t(opts.top_k));
      const float mx = logits(order[0]);
      for (int i = 0; i < opts.top_k; ++i) {
        probs[size_t(i)] = std::exp(double(logits(order[size_t(i)]) - mx));
        denom += probs[size_t(i)];
      }
      double pick = sampler.uniform() * denom;
      next = order[size_t(opts.top_k - 1)];
      for (int i = 0; i < opts.top_k; ++i) {
        pick -= probs[size_t(i)];
        if (pick <= 0.0) {
          next = order[size_t(i)];
          break;
        }
      }
    } else {
      int best = 0;
      for (int i = 1; i < logits.size(); ++i)
        if (logits(i) > logits(best)) best = i;
      next = best;
    }

    if (next == eos) {
      out.tokens.terminated_eos = true;
      break;
    }
    generated.push_back(next);
    hidden_rows.push_back(fwd.h_gpt->val.row(fwd.h_gpt->rows() - 1));
  }

  out.tokens.tokens = std::move(generated);
  out.h_gpt = Mat(int(hidden_rows.size()), cfg.dim);
  for (size_t i = 0; i < hidden_rows.size(); ++i) out.h_gpt.row(int(i)) = hidden_rows[i];
  return out;
}

TrainExample sample_example(const corpus::Corpus& corpus, const codec::CodecModel& codec_model,
                            int stage, const StageConfig& cfg, Rng& rng) {
  const auto speakers = corpus.speaker_ids();
  const std::string spk = speakers[size_t(rng.uniform_int(0, int(speakers.size()) - 1))];
  const auto pair = corpus::partition_pair(corpus, spk, rng);
  const double r1 = rng.uniform(cfg.speed_min, cfg.speed_max);
  const double r2 = rng.uniform(cfg.speed_min, cfg.speed_max);

  TrainExample ex;
  const auto& target = corpus.at(pair.target_idx);
  const auto& prompt = corpus.at(pair.prompt_idx);
  Mat target_mel = corpus::speed_perturb(target.mel, r1);
  ex.prompt_mel = corpus::speed_perturb(prompt.mel, r2);
  ex.style_mel = target_mel;
  ex.text = target.text_tokens;
  ex.sem = codec::encode(codec_model, target_mel);
  ex.p_zeroed = rng.uniform() < double(cfg.p_zero_prob);
  ex.speaker_index = corpus.speaker_index(target.speaker_id);
  (void)stage;
  return ex;
}

StageStats stage_train(int stage, const corpus::Corpus& corpus,
                       const codec::CodecModel& codec_model, T2SModel& model,
                       cond::SpeakerConditioner& speaker, cond::EmotionConditioner& emotion,
                       cond::SpeakerClassifier& classifier, const StageConfig& cfg) {
  if (stage < 1 || stage > 3) throw std::runtime_error("stage_train: stage must be 1, 2, or 3");
  corpus.validate(true);
  if (stage == 3 && !model.emotion_enabled)
    throw std::runtime_error("stage_train: stage 3 requires a completed stage-2 model");

  nn::ParamMap model_pm = model.params();
  nn::ParamMap spk_pm = speaker.params();
  nn::ParamMap emo_pm = emotion.params();
  nn::ParamMap cls_pm = classifier.params();

  nn::set_trainable(model_pm, true);
  nn::set_trainable(spk_pm, stage == 1);
  nn::set_trainable(emo_pm, stage == 2);
  nn::set_trainable(cls_pm, stage == 2);
  if (stage >= 2) model.emotion_enabled = true;

  std::vector<Value> trainables = model_pm.values();
  auto append = [&](const nn::ParamMap& pm) {
    for (const auto& v : pm.values()) trainables.push_back(v);
  };
  if (stage == 1) append(spk_pm);
  if (stage == 2) {
    append(emo_pm);
    append(cls_pm);
  }

  nn::AdamW opt;
  opt.lr = cfg.lr;
  Rng rng(cfg.seed + uint64_t(stage) * 0x51ed2701);

  StageStats stats;
  const float inv_batch = 1.0f / float(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    double step_loss = 0.0;
    for (int b = 0; b < cfg.batch; ++b) {
      TrainExample ex = sample_example(corpus, codec_model, stage, cfg, rng);
      ++stats.sample_count;
      if (ex.p_zeroed) ++stats.p_zero_count;

      const int t_len = int(ex.sem.tokens.size());
      if (t_len + 1 >= model.cfg.l_speech)
        throw std::runtime_error("stage_train: token sequence exceeds l_speech");

      Value c = speaker.embed(ex.prompt_mel);
      std::optional<Value> e;
      if (stage >= 2) e = emotion.embed(ex.style_mel);
      std::optional<Value> p;
      if (!ex.p_zeroed) p = model.duration_embedding(t_len);

      T2SInputSequence seq = model.assemble(c, e, p, ex.text, ex.sem.tokens);
      auto fwd = model.forward_teacher_forced(seq);
      std::vector<int> targets = ex.sem.tokens;
      targets.push_back(model.cfg.eos_id());

      Value loss;
      if (stage == 2 && cfg.alpha != 0.0f) {
        Value reversed = ad::grl(*e, cfg.grl_lambda);
        Value post = classifier.posterior(reversed);
        Value q_spk = ad::slice_cols(post, ex.speaker_index, 1);
        loss = ar_loss(fwd.logits, targets, q_spk, cfg.alpha);
      } else {
        loss = ar_loss(fwd.logits, targets, 1.0f, 0.0f);
      }
      step_loss += double(loss->scalar());
      ad::backward(ad::scale(loss, inv_batch));
    }
    nn::clip_grad_norm(trainables, double(cfg.grad_clip));
    opt.step(trainables);
    nn::zero_grads(trainables);
    stats.losses.push_back(step_loss / cfg.batch);
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      std::cerr << "[t2s] stage " << stage << " step " << (step + 1) << "/" << cfg.steps
                << " loss " << stats.losses.back() << "\n";
  }
  return stats;
}

double teacher_forced_accuracy(const T2SModel& model, const corpus::Corpus& corpus,
                               const codec::CodecModel& codec_model,
                               const cond::SpeakerConditioner& speaker,
                               const cond::EmotionConditioner& emotion, bool use_emotion) {
  int64_t correct = 0, total = 0;
  for (const auto& [spk, ids] : corpus.speakers) {
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto& target = corpus.at(ids[i]);
      const auto& prompt = corpus.at(ids[(i + 1) % ids.size()]);
      auto sem = codec::encode(codec_model, target.mel);
      Value c = speaker.embed(prompt.mel);
      std::optional<Value> e;
      if (use_emotion) e = emotion.embed(target.mel);
      std::optional<Value> p = model.duration_embedding(int(sem.tokens.size()));
      auto seq = model.assemble(c, e, p, target.text_tokens, sem.tokens);
      auto fwd = model.forward_teacher_forced(seq);
      std::vector<int> targets = sem.tokens;
      targets.push_back(model.cfg.eos_id());
      for (int r = 0; r < fwd.logits->rows(); ++r) {
        int best = 0;
        for (int ccol = 1; ccol < fwd.logits->cols(); ++ccol)
          if (fwd.logits->val(r, ccol) > fwd.logits->val(r, best)) best = ccol;
        correct += (best == targets[size_t(r)]) ? 1 : 0;
        ++total;
      }
    }
  }
  return total > 0 ? double(correct) / double(total) : 0.0;
}

}  // namespace dtts::t2s
