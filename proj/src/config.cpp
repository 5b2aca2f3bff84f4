#include "dtts/config.hpp"

#include <sstream>

namespace dtts::pipeline {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<double> parse_csv_doubles(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

std::string csv_of(const std::vector<double>& v) {
  std::ostringstream ss;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) ss << ",";
    ss << v[i];
  }
  return ss.str();
}

template <typename T>
void get(const ConfigMap& m, const std::string& key, T& out) {
  auto it = m.find(key);
  if (it == m.end()) return;
  if constexpr (std::is_same_v<T, std::string>) {
    out = it->second;
  } else if constexpr (std::is_same_v<T, uint64_t>) {
    out = std::stoull(it->second);
  } else if constexpr (std::is_same_v<T, int>) {
    out = std::stoi(it->second);
  } else if constexpr (std::is_same_v<T, double>) {
    out = std::stod(it->second);
  } else if constexpr (std::is_same_v<T, std::vector<double>>) {
    out = parse_csv_doubles(it->second);
  }
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap out;
  std::istringstream in(text);
  std::string line, section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#' || t[0] == ';') continue;
    if (t.front() == '[') {
      if (t.back() != ']')
        throw std::runtime_error("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(t.substr(1, t.size() - 2));
      continue;
    }
    const size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (section.empty())
      throw std::runtime_error("config line " + std::to_string(line_no) + ": key outside a section");
    out[section + "." + key] = value;
  }
  return out;
}

std::string config_map_to_text(const ConfigMap& map) {
  std::ostringstream out;
  std::string section;
  for (const auto& [full_key, value] : map) {
    const size_t dot = full_key.find('.');
    const std::string sec = full_key.substr(0, dot);
    const std::string key = full_key.substr(dot + 1);
    if (sec != section) {
      if (!section.empty()) out << "\n";
      out << "[" << sec << "]\n";
      section = sec;
    }
    out << key << " = " << value << "\n";
  }
  return out.str();
}

RunConfig RunConfig::from_map(const ConfigMap& map) {
  RunConfig cfg;
  const ConfigMap known = cfg.to_map();
  for (const auto& [key, value] : map)
    if (known.find(key) == known.end())
      throw std::runtime_error("unknown config key: '" + key + "'");

  get(map, "corpus.seed", cfg.corpus_seed);
  get(map, "corpus.n_speakers", cfg.n_speakers);
  get(map, "corpus.utts_per_speaker", cfg.utts_per_speaker);
  get(map, "corpus.frames_min", cfg.frames_min);
  get(map, "corpus.frames_max", cfg.frames_max);
  get(map, "corpus.d_mel", cfg.d_mel);
  get(map, "corpus.v_text", cfg.v_text);
  get(map, "corpus.n_contents", cfg.n_contents);
  get(map, "corpus.noise_std", cfg.noise_std);

  get(map, "codec.v_sem", cfg.v_sem);
  get(map, "codec.d_code", cfg.d_code);
  get(map, "codec.downsample", cfg.downsample);
  get(map, "codec.commit_weight", cfg.commit_weight);
  get(map, "codec.kmeans_iters", cfg.codec_kmeans_iters);
  get(map, "codec.finetune_steps", cfg.codec_finetune_steps);
  get(map, "codec.batch", cfg.codec_batch);
  get(map, "codec.lr", cfg.codec_lr);
  get(map, "codec.seed", cfg.codec_seed);

  get(map, "model.dim", cfg.dim);
  get(map, "model.layers", cfg.t2s_layers);
  get(map, "model.heads", cfg.heads);
  get(map, "model.l_speech", cfg.l_speech);
  get(map, "model.max_text", cfg.max_text);
  get(map, "model.context", cfg.context);
  get(map, "model.cond_hidden", cfg.cond_hidden);
  get(map, "model.cond_seed", cfg.cond_seed);
  get(map, "model.t2s_seed", cfg.t2s_seed);

  get(map, "t2s.alpha", cfg.alpha);
  get(map, "t2s.grl_lambda", cfg.grl_lambda);
  get(map, "t2s.p_zero_prob", cfg.p_zero_prob);
  get(map, "t2s.speed_min", cfg.speed_min);
  get(map, "t2s.speed_max", cfg.speed_max);
  get(map, "t2s.lr", cfg.t2s_lr);
  get(map, "t2s.batch", cfg.t2s_batch);
  get(map, "t2s.stage1_steps", cfg.stage1_steps);
  get(map, "t2s.stage2_steps", cfg.stage2_steps);
  get(map, "t2s.stage3_steps", cfg.stage3_steps);
  get(map, "t2s.grad_clip", cfg.grad_clip);
  get(map, "t2s.train_seed", cfg.t2s_train_seed);
  get(map, "t2s.top_k", cfg.top_k);
  get(map, "t2s.decode_mode", cfg.decode_mode);

  get(map, "s2m.hidden", cfg.s2m_hidden);
  get(map, "s2m.layers", cfg.s2m_layers);
  get(map, "s2m.heads", cfg.s2m_heads);
  get(map, "s2m.fuse_hidden", cfg.fuse_hidden);
  get(map, "s2m.fusion_prob", cfg.fusion_prob);
  get(map, "s2m.t_feats", cfg.t_feats);
  get(map, "s2m.ode_steps", cfg.ode_steps);
  get(map, "s2m.loss_target", cfg.loss_target);
  get(map, "s2m.prompt_dropout", cfg.prompt_dropout);
  get(map, "s2m.ode_convergence_tol", cfg.ode_convergence_tol);
  get(map, "s2m.lr", cfg.s2m_lr);
  get(map, "s2m.batch", cfg.s2m_batch);
  get(map, "s2m.train_steps", cfg.s2m_train_steps);
  get(map, "s2m.min_split_tokens", cfg.min_split_tokens);
  get(map, "s2m.seed", cfg.s2m_seed);
  get(map, "s2m.train_seed", cfg.s2m_train_seed);

  get(map, "t2e.pairs", cfg.t2e_pairs);
  get(map, "t2e.parallelism", cfg.t2e_parallelism);
  get(map, "t2e.student_dim", cfg.student_dim);
  get(map, "t2e.student_layers", cfg.student_layers);
  get(map, "t2e.student_heads", cfg.student_heads);
  get(map, "t2e.student_vocab", cfg.student_vocab);
  get(map, "t2e.student_max_tokens", cfg.student_max_tokens);
  get(map, "t2e.lora_rank", cfg.lora_rank);
  get(map, "t2e.distill_steps", cfg.distill_steps);
  get(map, "t2e.distill_batch", cfg.distill_batch);
  get(map, "t2e.distill_lr", cfg.distill_lr);
  get(map, "t2e.holdout_frac", cfg.holdout_frac);
  get(map, "t2e.student_seed", cfg.student_seed);
  get(map, "t2e.distill_seed", cfg.distill_seed);
  get(map, "t2e.teacher", cfg.teacher);
  get(map, "t2e.teacher_host", cfg.teacher_host);
  get(map, "t2e.teacher_port", cfg.teacher_port);
  get(map, "t2e.teacher_timeout_sec", cfg.teacher_timeout_sec);
  get(map, "t2e.simplex_tol", cfg.simplex_tol);

  get(map, "pipeline.seed", cfg.pipeline_seed);
  get(map, "pipeline.factors", cfg.factors);
  get(map, "pipeline.gl_iters", cfg.gl_iters);
  get(map, "pipeline.sample_rate", cfg.sample_rate);
  get(map, "pipeline.n_fft", cfg.n_fft);
  get(map, "pipeline.hop", cfg.hop);
  get(map, "pipeline.fmin", cfg.fmin);
  get(map, "pipeline.fmax", cfg.fmax);

  cfg.validate();
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) {
  return from_map(parse_config_text(read_file(path)));
}

ConfigMap RunConfig::to_map() const {
  ConfigMap m;
  auto put = [&](const std::string& key, auto value) {
    if constexpr (std::is_same_v<decltype(value), std::string>) {
      m[key] = value;
    } else {
      std::ostringstream ss;
      ss << value;
      m[key] = ss.str();
    }
  };
  put("corpus.seed", corpus_seed);
  put("corpus.n_speakers", n_speakers);
  put("corpus.utts_per_speaker", utts_per_speaker);
  put("corpus.frames_min", frames_min);
  put("corpus.frames_max", frames_max);
  put("corpus.d_mel", d_mel);
  put("corpus.v_text", v_text);
  put("corpus.n_contents", n_contents);
  put("corpus.noise_std", noise_std);

  put("codec.v_sem", v_sem);
  put("codec.d_code", d_code);
  put("codec.downsample", downsample);
  put("codec.commit_weight", commit_weight);
  put("codec.kmeans_iters", codec_kmeans_iters);
  put("codec.finetune_steps", codec_finetune_steps);
  put("codec.batch", codec_batch);
  put("codec.lr", codec_lr);
  put("codec.seed", codec_seed);

  put("model.dim", dim);
  put("model.layers", t2s_layers);
  put("model.heads", heads);
  put("model.l_speech", l_speech);
  put("model.max_text", max_text);
  put("model.context", context);
  put("model.cond_hidden", cond_hidden);
  put("model.cond_seed", cond_seed);
  put("model.t2s_seed", t2s_seed);

  put("t2s.alpha", alpha);
  put("t2s.grl_lambda", grl_lambda);
  put("t2s.p_zero_prob", p_zero_prob);
  put("t2s.speed_min", speed_min);
  put("t2s.speed_max", speed_max);
  put("t2s.lr", t2s_lr);
  put("t2s.batch", t2s_batch);
  put("t2s.stage1_steps", stage1_steps);
  put("t2s.stage2_steps", stage2_steps);
  put("t2s.stage3_steps", stage3_steps);
  put("t2s.grad_clip", grad_clip);
  put("t2s.train_seed", t2s_train_seed);
  put("t2s.top_k", top_k);
  put("t2s.decode_mode", decode_mode);

  put("s2m.hidden", s2m_hidden);
  put("s2m.layers", s2m_layers);
  put("s2m.heads", s2m_heads);
  put("s2m.fuse_hidden", fuse_hidden);
  put("s2m.fusion_prob", fusion_prob);
  put("s2m.t_feats", t_feats);
  put("s2m.ode_steps", ode_steps);
  put("s2m.loss_target", loss_target);
  put("s2m.prompt_dropout", prompt_dropout);
  put("s2m.ode_convergence_tol", ode_convergence_tol);
  put("s2m.lr", s2m_lr);
  put("s2m.batch", s2m_batch);
  put("s2m.train_steps", s2m_train_steps);
  put("s2m.min_split_tokens", min_split_tokens);
  put("s2m.seed", s2m_seed);
  put("s2m.train_seed", s2m_train_seed);

  put("t2e.pairs", t2e_pairs);
  put("t2e.parallelism", t2e_parallelism);
  put("t2e.student_dim", student_dim);
  put("t2e.student_layers", student_layers);
  put("t2e.student_heads", student_heads);
  put("t2e.student_vocab", student_vocab);
  put("t2e.student_max_tokens", student_max_tokens);
  put("t2e.lora_rank", lora_rank);
  put("t2e.distill_steps", distill_steps);
  put("t2e.distill_batch", distill_batch);
  put("t2e.distill_lr", distill_lr);
  put("t2e.holdout_frac", holdout_frac);
  put("t2e.student_seed", student_seed);
  put("t2e.distill_seed", distill_seed);
  put("t2e.teacher", teacher);
  put("t2e.teacher_host", teacher_host);
  put("t2e.teacher_port", teacher_port);
  put("t2e.teacher_timeout_sec", teacher_timeout_sec);
  put("t2e.simplex_tol", simplex_tol);

  put("pipeline.seed", pipeline_seed);
  m["pipeline.factors"] = csv_of(factors);
  put("pipeline.gl_iters", gl_iters);
  put("pipeline.sample_rate", sample_rate);
  put("pipeline.n_fft", n_fft);
  put("pipeline.hop", hop);
  put("pipeline.fmin", fmin);
  put("pipeline.fmax", fmax);
  return m;
}

std::string RunConfig::canonical_text() const { return config_map_to_text(to_map()); }

uint64_t RunConfig::hash() const { return fnv1a(canonical_text()); }

void RunConfig::validate() const {
  auto in_01 = [](double v, const char* name) {
    if (v < 0.0 || v > 1.0)
      throw std::runtime_error(std::string("config: ") + name + " must be in [0, 1]");
  };
  in_01(p_zero_prob, "t2s.p_zero_prob");
  in_01(fusion_prob, "s2m.fusion_prob");
  in_01(prompt_dropout, "s2m.prompt_dropout");
  in_01(holdout_frac, "t2e.holdout_frac");
  if (speed_min <= 0.0 || speed_max < speed_min)
    throw std::runtime_error("config: bad speed perturbation range");
  for (double f : factors)
    if (f <= 0.0) throw std::runtime_error("config: duration factors must be > 0");
  if (alpha < 0.0) throw std::runtime_error("config: t2s.alpha must be >= 0");
  if (grl_lambda < 0.0) throw std::runtime_error("config: t2s.grl_lambda must be >= 0");
  if (decode_mode != "learned" && decode_mode != "strict")
    throw std::runtime_error("config: t2s.decode_mode must be learned or strict");
  if (loss_target != "velocity" && loss_target != "reconstruction")
    throw std::runtime_error("config: s2m.loss_target must be velocity or reconstruction");
  if (teacher != "mock" && teacher != "http")
    throw std::runtime_error("config: t2e.teacher must be mock or http");
  if (dim % heads != 0) throw std::runtime_error("config: model.dim must be divisible by heads");
  if (d_mel < 1 || v_sem < 2 || downsample < 1) throw std::runtime_error("config: bad codec dims");
}

void RunConfig::apply_overrides(const std::vector<std::string>& overrides) {
  ConfigMap m = to_map();
  for (const auto& ov : overrides) {
    const size_t eq = ov.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("override must look like section.key=value: '" + ov + "'");
    const std::string key = trim(ov.substr(0, eq));
    if (m.find(key) == m.end()) throw std::runtime_error("unknown config key: '" + key + "'");
    m[key] = trim(ov.substr(eq + 1));
  }
  *this = from_map(m);
}

corpus::SynthSpec RunConfig::synth_spec() const {
  corpus::SynthSpec s;
  s.seed = corpus_seed;
  s.n_speakers = n_speakers;
  s.utts_per_speaker = utts_per_speaker;
  s.frames_min = frames_min;
  s.frames_max = frames_max;
  s.d_mel = d_mel;
  s.v_text = v_text;
  s.n_contents = n_contents;
  s.noise_std = float(noise_std);
  return s;
}

codec::CodecConfig RunConfig::codec_config() const {
  codec::CodecConfig c;
  c.v_sem = v_sem;
  c.d_code = d_code;
  c.downsample = downsample;
  c.d_mel = d_mel;
  c.commit_weight = float(commit_weight);
  c.kmeans_iters = codec_kmeans_iters;
  c.finetune_steps = codec_finetune_steps;
  c.batch = codec_batch;
  c.lr = float(codec_lr);
  c.seed = codec_seed;
  return c;
}

cond::CondConfig RunConfig::cond_config() const {
  cond::CondConfig c;
  c.d_mel = d_mel;
  c.dim = dim;
  c.hidden = cond_hidden;
  c.seed = cond_seed;
  return c;
}

t2s::T2SConfig RunConfig::t2s_config() const {
  t2s::T2SConfig c;
  c.dim = dim;
  c.layers = t2s_layers;
  c.heads = heads;
  c.v_text = v_text;
  c.v_sem = v_sem;
  c.l_speech = l_speech;
  c.max_text = max_text;
  c.context = context;
  c.seed = t2s_seed;
  return c;
}

t2s::StageConfig RunConfig::stage_config(int stage) const {
  t2s::StageConfig c;
  c.steps = stage == 1 ? stage1_steps : (stage == 2 ? stage2_steps : stage3_steps);
  c.batch = t2s_batch;
  c.lr = float(t2s_lr);
  c.alpha = float(alpha);
  c.grl_lambda = float(grl_lambda);
  c.p_zero_prob = float(p_zero_prob);
  c.speed_min = speed_min;
  c.speed_max = speed_max;
  c.grad_clip = float(grad_clip);
  c.seed = t2s_train_seed;
  return c;
}

s2m::S2MConfig RunConfig::s2m_config() const {
  s2m::S2MConfig c;
  c.d_mel = d_mel;
  c.dim = dim;
  c.hidden = s2m_hidden;
  c.layers = s2m_layers;
  c.heads = s2m_heads;
  c.v_sem = v_sem;
  c.downsample = downsample;
  c.fuse_hidden = fuse_hidden;
  c.fusion_prob = float(fusion_prob);
  c.t_feats = t_feats;
  c.ode_steps = ode_steps;
  c.loss_target = loss_target == "velocity" ? s2m::S2MConfig::LossTarget::kVelocity
                                            : s2m::S2MConfig::LossTarget::kReconstruction;
  c.prompt_dropout = float(prompt_dropout);
  c.ode_convergence_tol = float(ode_convergence_tol);
  c.seed = s2m_seed;
  return c;
}

s2m::S2MTrainConfig RunConfig::s2m_train_config() const {
  s2m::S2MTrainConfig c;
  c.steps = s2m_train_steps;
  c.batch = s2m_batch;
  c.lr = float(s2m_lr);
  c.min_split_tokens = min_split_tokens;
  c.grad_clip = float(grad_clip);
  c.seed = s2m_train_seed;
  return c;
}

t2e::StudentConfig RunConfig::student_config() const {
  t2e::StudentConfig c;
  c.vocab = student_vocab;
  c.dim = student_dim;
  c.layers = student_layers;
  c.heads = student_heads;
  c.max_tokens = student_max_tokens;
  c.lora_rank = lora_rank;
  c.seed = student_seed;
  return c;
}

t2e::DistillConfig RunConfig::distill_config() const {
  t2e::DistillConfig c;
  c.steps = distill_steps;
  c.batch = distill_batch;
  c.lr = float(distill_lr);
  c.holdout_frac = holdout_frac;
  c.grad_clip = float(grad_clip);
  c.seed = distill_seed;
  return c;
}

dsp::AnalysisConfig RunConfig::analysis_config() const {
  dsp::AnalysisConfig c;
  c.sample_rate = sample_rate;
  c.n_fft = n_fft;
  c.hop = hop;
  c.n_mels = d_mel;
  c.fmin = fmin;
  c.fmax = fmax;
  return c;
}

}  // namespace dtts::pipeline
