#include "dtts/pipeline.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace dtts;

namespace {

pipeline::RunConfig load_config(const std::string& config_path,
                                const std::vector<std::string>& overrides) {
  pipeline::RunConfig cfg = config_path.empty() ? pipeline::RunConfig::defaults()
                                                : pipeline::RunConfig::from_file(config_path);
  cfg.apply_overrides(overrides);
  return cfg;
}

std::vector<int> parse_int_csv(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

std::vector<double> parse_double_csv(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stod(item));
  return out;
}

corpus::Corpus corpus_from_args(const pipeline::RunConfig& cfg, const std::string& manifest) {
  if (manifest.empty() || manifest == "synth") return corpus::synth_corpus(cfg.synth_spec());
  return corpus::load_manifest(manifest);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale duration-controllable TTS cascade"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "config file (key/value with sections)");
    cmd->add_option("--set", overrides, "override, e.g. --set t2s.alpha=0.2")->take_all();
  };

  // synth-corpus
  std::string out_dir;
  auto* synth_cmd = app.add_subcommand("synth-corpus", "generate a synthetic corpus");
  add_common(synth_cmd);
  synth_cmd->add_option("--out", out_dir, "output directory")->required();

  // train
  std::string train_corpus, resume_path, train_out;
  auto* train_cmd = app.add_subcommand("train", "run the full training pipeline");
  add_common(train_cmd);
  train_cmd->add_option("--corpus", train_corpus, "manifest path, or 'synth' (default)");
  train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
  train_cmd->add_option("--out", train_out, "output directory for checkpoints")->required();

  // synthesize
  std::string ckpt_path, text_csv, timbre_path, style_audio, style_text, style_vector;
  std::string wav_out, mel_out, duration_arg = "auto";
  uint64_t synth_seed = 0;
  auto* synth = app.add_subcommand("synthesize", "text tokens -> waveform");
  add_common(synth);
  synth->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  synth->add_option("--text", text_csv, "comma-separated text token ids")->required();
  synth->add_option("--timbre", timbre_path, "feature file with the timbre prompt mel")->required();
  synth->add_option("--style-audio", style_audio, "feature file with the style prompt mel");
  synth->add_option("--style-text", style_text, "style description routed through the student");
  synth->add_option("--style-vector", style_vector, "7 comma-separated emotion probabilities");
  synth->add_option("--duration", duration_arg, "token count, or 'auto' for free-form");
  synth->add_option("--seed", synth_seed, "sampling / noise seed");
  synth->add_option("--out", wav_out, "output wav path")->required();
  synth->add_option("--mel-out", mel_out, "optional output feature file for the mel");

  // eval-duration
  std::string eval_corpus, eval_out, factors_csv;
  auto* eval_cmd = app.add_subcommand("eval-duration", "token-count error under duration control");
  add_common(eval_cmd);
  eval_cmd->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
  eval_cmd->add_option("--corpus", eval_corpus, "manifest path, or 'synth' (default)");
  eval_cmd->add_option("--factors", factors_csv, "duration scaling factors (csv)");
  eval_cmd->add_option("--out", eval_out, "write the JSON report here");

  // distill-t2e
  std::string dataset_out;
  int n_pairs = 0;
  auto* distill_cmd = app.add_subcommand("distill-t2e", "build the distillation dataset / student");
  add_common(distill_cmd);
  distill_cmd->add_option("--n", n_pairs, "number of text-distribution pairs");
  distill_cmd->add_option("--out", dataset_out, "dataset output path (jsonl)")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth_cmd) {
      auto cfg = load_config(config_path, overrides);
      auto corpus = corpus::synth_corpus(cfg.synth_spec());
      corpus::save_manifest(corpus, out_dir);
      std::cout << "wrote " << corpus.size() << " utterances to " << out_dir << "\n";
    } else if (*train_cmd) {
      auto cfg = load_config(config_path, overrides);
      auto corpus = corpus_from_args(cfg, train_corpus);
      fs::create_directories(train_out);
      std::optional<pipeline::Checkpoint> resume;
      if (!resume_path.empty()) resume = pipeline::load_checkpoint(resume_path);
      auto on_stage = [&](pipeline::StageTag tag, const pipeline::TrainedSystem& sys) {
        const std::string path =
            (fs::path(train_out) / (std::string("stage_") + pipeline::stage_tag_name(tag) +
                                    ".dtt2")).string();
        pipeline::save_checkpoint(path, pipeline::to_checkpoint(sys));
        std::cout << "phase " << pipeline::stage_tag_name(tag) << " done -> " << path << "\n";
      };
      auto system = pipeline::train_all(cfg, corpus, resume, on_stage);
      const std::string final_path = (fs::path(train_out) / "checkpoint.dtt2").string();
      pipeline::save_checkpoint(final_path, pipeline::to_checkpoint(system));
      std::cout << "final checkpoint -> " << final_path << "\n";
    } else if (*synth) {
      auto ckpt = pipeline::load_checkpoint(ckpt_path);
      auto system = pipeline::from_checkpoint(ckpt);
      system.cfg.apply_overrides(overrides);
      pipeline::SynthesisRequest req;
      req.text_tokens = parse_int_csv(text_csv);
      req.timbre_prompt = corpus::load_feature_file(timbre_path);
      if (!style_audio.empty()) req.style.audio = corpus::load_feature_file(style_audio);
      if (!style_text.empty()) req.style.text = style_text;
      if (!style_vector.empty()) {
        auto probs = parse_double_csv(style_vector);
        if (probs.size() != size_t(kNumEmotions))
          throw std::runtime_error("--style-vector needs exactly 7 values");
        t2e::EmotionDistribution d;
        for (int i = 0; i < kNumEmotions; ++i) d.p[size_t(i)] = probs[size_t(i)];
        req.style.vector = d;
      }
      if (duration_arg != "auto") req.duration_tokens = std::stoi(duration_arg);
      req.seed = synth_seed;
      auto result = pipeline::synthesize(system, req);
      dsp::write_wav16(wav_out, result.waveform, system.cfg.sample_rate);
      if (!mel_out.empty()) corpus::save_feature_file(mel_out, result.mel);
      std::cout << "tokens=" << result.tokens.tokens.size()
                << (result.truncated ? " (truncated)" : "") << " frames=" << result.mel.rows()
                << " samples=" << result.waveform.size() << " -> " << wav_out << "\n";
    } else if (*eval_cmd) {
      auto ckpt = pipeline::load_checkpoint(ckpt_path);
      auto system = pipeline::from_checkpoint(ckpt);
      system.cfg.apply_overrides(overrides);
      auto corpus = corpus_from_args(system.cfg, eval_corpus);
      std::vector<double> factors =
          factors_csv.empty() ? system.cfg.factors : parse_double_csv(factors_csv);
      auto report = pipeline::eval_duration(system, corpus, factors);
      std::cout << pipeline::duration_report_table(report);
      if (!eval_out.empty()) {
        write_file(eval_out, pipeline::duration_report_json(report));
        std::cout << "report -> " << eval_out << "\n";
      }
    } else if (*distill_cmd) {
      auto cfg = load_config(config_path, overrides);
      const int n = n_pairs > 0 ? n_pairs : cfg.t2e_pairs;
      std::unique_ptr<t2e::Teacher> teacher;
      if (cfg.teacher == "http")
        teacher = std::make_unique<t2e::HttpTeacher>(cfg.teacher_host, cfg.teacher_port,
                                                     cfg.teacher_timeout_sec, 1, cfg.simplex_tol);
      else
        teacher = std::make_unique<t2e::LexiconTeacher>(cfg.pipeline_seed);
      Rng rng(cfg.pipeline_seed ^ 0xd15711);
      auto dataset = t2e::build_distill_dataset(n, *teacher, rng, cfg.t2e_parallelism);
      t2e::save_distill_dataset(dataset_out, dataset);
      t2e::Student student(cfg.student_config());
      auto stats = t2e::distill_student(student, dataset, cfg.distill_config());
      std::cout << "dataset (" << dataset.size() << " pairs) -> " << dataset_out << "\n"
                << "holdout cross-entropy " << stats.holdout_ce_before << " -> "
                << stats.holdout_ce_after << "\n";
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
