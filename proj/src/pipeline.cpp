#include "dtts/pipeline.hpp"

#include "dtts/dsp.hpp"

#include <json.hpp>

#include <cmath>
#include <iostream>
#include <sstream>

using json = nlohmann::json;

namespace dtts::pipeline {

TrainedSystem init_system(const RunConfig& cfg) {
  cfg.validate();
  TrainedSystem s;
  s.cfg = cfg;
  s.codec_model.cfg = cfg.codec_config();
  s.speaker = cond::SpeakerConditioner(cfg.cond_config());
  s.emotion = cond::EmotionConditioner(cfg.cond_config());
  s.classifier = cond::SpeakerClassifier(cfg.cond_config(), cfg.n_speakers);
  s.t2s_model = t2s::T2SModel(cfg.t2s_config());
  s.s2m_model = s2m::S2MModel(cfg.s2m_config());
  s.student = t2e::Student(cfg.student_config());
  return s;
}

namespace {

std::string conditioners_blob(const TrainedSystem& s) {
  ByteWriter w;
  w.put_u32(uint32_t(s.classifier.n_speakers));
  nn::ParamMap spk = s.speaker.params();
  nn::ParamMap emo = s.emotion.params();
  nn::ParamMap cls = s.classifier.params();
  nn::save_params(w, spk);
  nn::save_params(w, emo);
  nn::save_params(w, cls);
  return std::move(w.buf);
}

std::string t2s_blob(const TrainedSystem& s) {
  ByteWriter w;
  w.put_u32(s.t2s_model.emotion_enabled ? 1 : 0);
  nn::ParamMap pm = s.t2s_model.params();
  nn::save_params(w, pm);
  return std::move(w.buf);
}

std::string s2m_blob(const TrainedSystem& s) {
  ByteWriter w;
  nn::ParamMap pm = s.s2m_model.params();
  nn::save_params(w, pm);
  return std::move(w.buf);
}

std::string t2e_blob(const TrainedSystem& s) {
  ByteWriter w;
  w.put_u32(s.has_bank ? 1 : 0);
  if (s.has_bank) {
    for (int e = 0; e < kNumEmotions; ++e) {
      const auto& members = s.bank.members[size_t(e)];
      w.put_u32(uint32_t(members.size()));
      for (const auto& v : members) {
        Mat row = v;
        w.put_mat(row);
      }
    }
  }
  w.put_u32(s.has_student ? 1 : 0);
  if (s.has_student) t2e::save_student(w, s.student);
  return std::move(w.buf);
}

void load_t2e_blob(const std::string& blob, TrainedSystem& s) {
  ByteReader r(blob);
  s.has_bank = r.get_u32() != 0;
  if (s.has_bank) {
    for (int e = 0; e < kNumEmotions; ++e) {
      const uint32_t n = r.get_u32();
      s.bank.members[size_t(e)].clear();
      for (uint32_t i = 0; i < n; ++i) {
        Mat row = r.get_mat();
        s.bank.members[size_t(e)].push_back(Vec(row.row(0)));
      }
    }
    for (int e = 0; e < kNumEmotions; ++e) {
      Vec mean = Vec::Zero(s.cfg.dim);
      for (const auto& v : s.bank.members[size_t(e)]) mean += v;
      if (!s.bank.members[size_t(e)].empty())
        mean /= float(s.bank.members[size_t(e)].size());
      s.bank.means[size_t(e)] = mean;
    }
  }
  s.has_student = r.get_u32() != 0;
  if (s.has_student) t2e::load_student(r, s.student);
}

}  // namespace

Checkpoint to_checkpoint(const TrainedSystem& s) {
  Checkpoint ckpt;
  ckpt.stage = s.stage;
  ckpt.config_text = s.cfg.canonical_text();
  ckpt.sections["codec"] = codec::serialize_codec(s.codec_model);
  ckpt.sections["conditioners"] = conditioners_blob(s);
  ckpt.sections["t2s"] = t2s_blob(s);
  ckpt.sections["s2m"] = s2m_blob(s);
  ckpt.sections["t2e"] = t2e_blob(s);
  return ckpt;
}

TrainedSystem from_checkpoint(const Checkpoint& ckpt) {
  RunConfig cfg = RunConfig::from_map(parse_config_text(ckpt.config_text));
  TrainedSystem s = init_system(cfg);
  s.stage = ckpt.stage;

  s.codec_model = codec::deserialize_codec(ckpt.sections.at("codec"));

  {
    ByteReader r(ckpt.sections.at("conditioners"));
    const int n_spk = int(r.get_u32());
    if (n_spk != s.classifier.n_speakers)
      s.classifier = cond::SpeakerClassifier(cfg.cond_config(), n_spk);
    nn::ParamMap spk = s.speaker.params();
    nn::ParamMap emo = s.emotion.params();
    nn::ParamMap cls = s.classifier.params();
    nn::load_params(r, spk);
    nn::load_params(r, emo);
    nn::load_params(r, cls);
  }
  {
    ByteReader r(ckpt.sections.at("t2s"));
    s.t2s_model.emotion_enabled = r.get_u32() != 0;
    nn::ParamMap pm = s.t2s_model.params();
    nn::load_params(r, pm);
  }
  {
    ByteReader r(ckpt.sections.at("s2m"));
    nn::ParamMap pm = s.s2m_model.params();
    nn::load_params(r, pm);
  }
  load_t2e_blob(ckpt.sections.at("t2e"), s);
  return s;
}

TrainedSystem train_all(const RunConfig& cfg, const corpus::Corpus& corpus,
                        const std::optional<Checkpoint>& resume, const StageCallback& on_stage,
                        t2e::Teacher* teacher_override) {
  cfg.validate();
  corpus.validate(true);

  TrainedSystem system;
  if (resume) {
    if (resume->config_hash() != cfg.hash())
      throw std::runtime_error(
          "refusing to resume: checkpoint was produced under a different configuration");
    system = from_checkpoint(*resume);
  } else {
    system = init_system(cfg);
  }

  auto run_phase = [&](StageTag tag, const char* name, auto&& body) {
    if (uint32_t(system.stage) >= uint32_t(tag)) return;  // already done
    try {
      body();
    } catch (const std::exception& e) {
      throw std::runtime_error(std::string("phase '") + name + "' failed: " + e.what());
    }
    system.stage = tag;
    if (on_stage) on_stage(tag, system);
  };

  run_phase(StageTag::kCodec, "codec", [&] {
    system.codec_model = codec::train_vq(corpus, cfg.codec_config());
  });
  for (int stage = 1; stage <= 3; ++stage) {
    const StageTag tag = StageTag(uint32_t(StageTag::kCodec) + uint32_t(stage));
    const std::string name = "t2s-stage" + std::to_string(stage);
    run_phase(tag, name.c_str(), [&] {
      t2s::stage_train(stage, corpus, system.codec_model, system.t2s_model, system.speaker,
                       system.emotion, system.classifier, cfg.stage_config(stage));
    });
  }
  run_phase(StageTag::kS2M, "s2m", [&] {
    s2m::train_s2m(corpus, system.codec_model, system.t2s_model, system.speaker, system.emotion,
                   system.s2m_model, cfg.s2m_train_config());
  });
  run_phase(StageTag::kComplete, "t2e", [&] {
    system.bank = t2e::build_bank(corpus, system.emotion);
    system.has_bank = true;
    std::unique_ptr<t2e::Teacher> owned;
    t2e::Teacher* teacher = teacher_override;
    if (teacher == nullptr) {
      if (cfg.teacher == "http") {
        owned = std::make_unique<t2e::HttpTeacher>(cfg.teacher_host, cfg.teacher_port,
                                                   cfg.teacher_timeout_sec, 1, cfg.simplex_tol);
      } else {
        owned = std::make_unique<t2e::LexiconTeacher>(cfg.pipeline_seed);
      }
      teacher = owned.get();
    }
    Rng rng(cfg.pipeline_seed ^ 0xd15711);
    auto dataset = t2e::build_distill_dataset(cfg.t2e_pairs, *teacher, rng, cfg.t2e_parallelism);
    system.student = t2e::Student(cfg.student_config());
    t2e::distill_student(system.student, dataset, cfg.distill_config());
    system.has_student = true;
  });
  return system;
}

SynthesisResult synthesize(const TrainedSystem& system, const SynthesisRequest& request) {
  if (uint32_t(system.stage) < uint32_t(StageTag::kS2M))
    throw std::runtime_error("synthesize: checkpoint is not trained through the mel decoder");
  const auto& cfg = system.cfg;

  ad::Value c = ad::constant(system.speaker.embed(request.timbre_prompt)->val);

  const int provided = int(request.style.audio.has_value()) + int(request.style.text.has_value()) +
                       int(request.style.vector.has_value());
  if (provided != 1)
    throw std::runtime_error("synthesize: provide exactly one style source (audio, text, vector)");
  ad::Value e;
  if (request.style.audio) {
    e = ad::constant(system.emotion.embed(*request.style.audio)->val);
  } else if (request.style.text) {
    if (!system.has_student)
      throw std::runtime_error("synthesize: text style requires a distilled emotion student");
    if (!system.has_bank) throw std::runtime_error("synthesize: no emotion bank in checkpoint");
    t2e::EmotionDistribution p = system.student.predict(*request.style.text);
    Mat row = t2e::mix_emotion_vector(p, system.bank);
    e = ad::constant(row);
  } else {
    if (!system.has_bank) throw std::runtime_error("synthesize: no emotion bank in checkpoint");
    request.style.vector->validate(0.02);
    Mat row = t2e::mix_emotion_vector(*request.style.vector, system.bank);
    e = ad::constant(row);
  }

  t2s::DecodeOptions opts;
  opts.mode = cfg.decode_mode == "strict" ? t2s::DecodeOptions::Mode::kStrict
                                          : t2s::DecodeOptions::Mode::kLearned;
  if (request.duration_tokens) {
    if (*request.duration_tokens >= cfg.l_speech)
      throw std::runtime_error("synthesize: requested duration exceeds the duration table");
    opts.duration = *request.duration_tokens;
  }
  opts.top_k = cfg.top_k;
  opts.sample_seed = request.seed;

  SynthesisResult result;
  auto out = system.t2s_model.decode(c, e, opts, request.text_tokens);
  result.tokens = out.tokens;
  result.truncated = out.truncated;
  const int ds = cfg.downsample;
  const int n_tok = int(out.tokens.tokens.size());
  if (n_tok == 0) {
    result.mel = Mat(0, cfg.d_mel);
    return result;
  }

  // Fusion is always on at inference: the decoder latents ride along with the
  // token embeddings.
  auto fused = s2m::fuse_latents(system.s2m_model, ad::constant(out.h_gpt),
                                 system.s2m_model.token_features(out.tokens.tokens), true);
  ad::Value target_feat = s2m::upsample_tokens(fused.q_fin, ds);

  const int prompt_tok = int(request.timbre_prompt.rows()) / ds;
  Mat prompt_mel = request.timbre_prompt.topRows(prompt_tok * ds);
  auto prompt_seq = codec::encode(system.codec_model, prompt_mel);
  auto prompt_plain = s2m::fuse_latents(
      system.s2m_model, ad::constant(Mat::Zero(prompt_tok, cfg.dim)),
      system.s2m_model.token_features(prompt_seq.tokens), false);
  ad::Value prompt_feat = s2m::upsample_tokens(prompt_plain.q_fin, ds);

  Rng rng(request.seed);
  result.mel = s2m::generate_mel(system.s2m_model, target_feat, prompt_feat, c, prompt_mel,
                                 n_tok * ds, cfg.ode_steps, rng);
  result.waveform = dsp::griffin_lim(result.mel, cfg.gl_iters, cfg.analysis_config());
  return result;
}

DurationReport eval_duration(const TrainedSystem& system, const corpus::Corpus& test_corpus,
                             const std::vector<double>& factors) {
  if (uint32_t(system.stage) < uint32_t(StageTag::kT2SStage3))
    throw std::runtime_error("eval_duration: checkpoint is not trained through stage 3");
  const auto& cfg = system.cfg;

  DurationReport report;
  report.per_factor.resize(factors.size());
  for (size_t fi = 0; fi < factors.size(); ++fi) report.per_factor[fi].factor = factors[fi];

  std::vector<double> err_sum(factors.size(), 0.0);
  std::vector<int> mismatch(factors.size(), 0);

  for (const auto& [spk, ids] : test_corpus.speakers) {
    for (size_t i = 0; i < ids.size(); ++i) {
      const auto& utt = test_corpus.at(ids[i]);
      const auto& prompt = test_corpus.at(ids[(i + 1) % ids.size()]);
      const int gt_len = int(codec::encode(system.codec_model, utt.mel).tokens.size());

      ad::Value c = ad::constant(system.speaker.embed(prompt.mel)->val);
      std::optional<ad::Value> e;
      if (system.t2s_model.emotion_enabled)
        e = ad::constant(system.emotion.embed(utt.mel)->val);

      for (size_t fi = 0; fi < factors.size(); ++fi) {
        const int target = int(std::lround(factors[fi] * double(gt_len)));
        auto& pf = report.per_factor[fi];
        if (target < 1 || target >= cfg.l_speech) {
          ++pf.skipped;
          continue;
        }
        t2s::DecodeOptions opts;
        opts.duration = target;
        opts.mode = cfg.decode_mode == "strict" ? t2s::DecodeOptions::Mode::kStrict
                                                : t2s::DecodeOptions::Mode::kLearned;
        auto out = system.t2s_model.decode(c, e, opts, utt.text_tokens);
        const int gen = int(out.tokens.tokens.size());
        report.items.push_back({utt.id, factors[fi], target, gen});
        err_sum[fi] += std::abs(double(gen - target)) / double(target);
        if (gen != target) ++mismatch[fi];
        ++pf.evaluated;
      }
    }
  }
  for (size_t fi = 0; fi < factors.size(); ++fi) {
    auto& pf = report.per_factor[fi];
    if (pf.evaluated > 0) {
      pf.error_rate = 100.0 * err_sum[fi] / double(pf.evaluated);
      pf.mismatch_rate = 100.0 * double(mismatch[fi]) / double(pf.evaluated);
    }
  }
  return report;
}

bool DurationReport::all_exact() const {
  for (const auto& item : items)
    if (item.generated_len != item.target_len) return false;
  return true;
}

std::string duration_report_json(const DurationReport& report) {
  json j;
  j["per_factor"] = json::array();
  for (const auto& pf : report.per_factor) {
    j["per_factor"].push_back({{"factor", pf.factor},
                               {"error_rate", pf.error_rate},
                               {"mismatch_rate", pf.mismatch_rate},
                               {"evaluated", pf.evaluated},
                               {"skipped", pf.skipped}});
  }
  j["items"] = json::array();
  for (const auto& item : report.items) {
    j["items"].push_back({{"id", item.utterance_id},
                          {"factor", item.factor},
                          {"target_len", item.target_len},
                          {"generated_len", item.generated_len}});
  }
  return j.dump(2);
}

std::string duration_report_table(const DurationReport& report) {
  std::ostringstream out;
  out << "factor | error_rate(%) | mismatch_rate(%) | evaluated | skipped\n";
  for (const auto& pf : report.per_factor) {
    out << pf.factor << " | " << pf.error_rate << " | " << pf.mismatch_rate << " | "
        << pf.evaluated << " | " << pf.skipped << "\n";
  }
  return out.str();
}

std::vector<float> griffin_lim(const TrainedSystem& system, const Mat& mel, int iters) {
  return dsp::griffin_lim(mel, iters, system.cfg.analysis_config());
}

namespace {
std::vector<std::shared_ptr<ExternalMetric>> g_metrics;
}

void register_external_metric(std::shared_ptr<ExternalMetric> metric) {
  g_metrics.push_back(std::move(metric));
}

const std::vector<std::shared_ptr<ExternalMetric>>& external_metrics() { return g_metrics; }

}  // namespace dtts::pipeline
