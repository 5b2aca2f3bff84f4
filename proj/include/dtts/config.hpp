#pragma once

#include "dtts/codec.hpp"
#include "dtts/conditioners.hpp"
#include "dtts/corpus.hpp"
#include "dtts/dsp.hpp"
#include "dtts/s2m.hpp"
#include "dtts/t2e.hpp"
#include "dtts/t2s.hpp"

#include <map>
#include <string>
#include <vector>

namespace dtts::pipeline {

// Flat key/value view of the sectioned config file; keys are "section.key".
using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
std::string config_map_to_text(const ConfigMap& map);

struct RunConfig {
  // corpus
  uint64_t corpus_seed = 1234;
  int n_speakers = 3;
  int utts_per_speaker = 8;
  int frames_min = 40;
  int frames_max = 72;
  int d_mel = 80;
  int v_text = 32;
  int n_contents = 4;
  double noise_std = 0.02;

  // codec
  int v_sem = 64;
  int d_code = 16;
  int downsample = 4;
  double commit_weight = 0.25;
  int codec_kmeans_iters = 25;
  int codec_finetune_steps = 600;
  int codec_batch = 32;
  double codec_lr = 1e-3;
  uint64_t codec_seed = 99;

  // model (shared widths + conditioners)
  int dim = 128;
  int t2s_layers = 4;
  int heads = 4;
  int l_speech = 64;
  int max_text = 64;
  int context = 512;
  int cond_hidden = 64;
  uint64_t cond_seed = 7;
  uint64_t t2s_seed = 11;

  // t2s training / decoding
  double alpha = 0.1;
  double grl_lambda = 1.0;
  double p_zero_prob = 0.3;
  double speed_min = 0.9;
  double speed_max = 1.1;
  double t2s_lr = 1e-3;
  int t2s_batch = 4;
  int stage1_steps = 2200;
  int stage2_steps = 900;
  int stage3_steps = 600;
  double grad_clip = 1.0;
  uint64_t t2s_train_seed = 123;
  int top_k = 0;
  std::string decode_mode = "learned";  // learned | strict

  // s2m
  int s2m_hidden = 192;
  int s2m_layers = 3;
  int s2m_heads = 4;
  int fuse_hidden = 256;
  double fusion_prob = 0.5;
  int t_feats = 32;
  int ode_steps = 16;
  std::string loss_target = "velocity";  // velocity | reconstruction
  double prompt_dropout = 0.3;
  double ode_convergence_tol = 0.5;
  double s2m_lr = 1e-3;
  int s2m_batch = 2;
  int s2m_train_steps = 2500;
  int min_split_tokens = 2;
  uint64_t s2m_seed = 21;
  uint64_t s2m_train_seed = 31;

  // t2e
  int t2e_pairs = 1000;
  int t2e_parallelism = 1;
  int student_dim = 64;
  int student_layers = 2;
  int student_heads = 2;
  int student_vocab = 256;
  int student_max_tokens = 48;
  int lora_rank = 4;
  int distill_steps = 600;
  int distill_batch = 8;
  double distill_lr = 3e-3;
  double holdout_frac = 0.2;
  uint64_t student_seed = 41;
  uint64_t distill_seed = 43;
  std::string teacher = "mock";  // mock | http
  std::string teacher_host = "127.0.0.1";
  int teacher_port = 8080;
  int teacher_timeout_sec = 10;
  double simplex_tol = 0.02;

  // pipeline
  uint64_t pipeline_seed = 7;
  std::vector<double> factors = {0.75, 0.875, 1.0, 1.125, 1.25};
  int gl_iters = 32;
  int sample_rate = 16000;
  int n_fft = 512;
  int hop = 128;
  double fmin = 0.0;
  double fmax = 8000.0;

  static RunConfig defaults() { return RunConfig{}; }
  static RunConfig from_map(const ConfigMap& map);
  static RunConfig from_file(const std::string& path);
  ConfigMap to_map() const;
  std::string canonical_text() const;
  uint64_t hash() const;
  void validate() const;
  // Overrides of the form "section.key=value".
  void apply_overrides(const std::vector<std::string>& overrides);

  corpus::SynthSpec synth_spec() const;
  codec::CodecConfig codec_config() const;
  cond::CondConfig cond_config() const;
  t2s::T2SConfig t2s_config() const;
  t2s::StageConfig stage_config(int stage) const;
  s2m::S2MConfig s2m_config() const;
  s2m::S2MTrainConfig s2m_train_config() const;
  t2e::StudentConfig student_config() const;
  t2e::DistillConfig distill_config() const;
  dsp::AnalysisConfig analysis_config() const;
};

}  // namespace dtts::pipeline
