#pragma once

#include "dtts/common.hpp"
#include "dtts/emotions.hpp"

#include <map>
#include <string>
#include <vector>

namespace dtts::corpus {

struct Utterance {
  std::string id;
  std::string speaker_id;
  int emotion = kNumEmotions - 1;  // Neutral
  std::vector<int> text_tokens;
  Mat mel;  // frames x mel bins
  int sample_rate = 16000;
};

struct Corpus {
  std::vector<Utterance> utterances;
  std::map<std::string, std::vector<int>> speakers;  // speaker_id -> utterance indices

  void rebuild_index();
  // Training mode additionally requires >= 2 utterances per speaker.
  void validate(bool training_mode) const;
  const Utterance& at(int idx) const { return utterances[size_t(idx)]; }
  int size() const { return int(utterances.size()); }
  std::vector<std::string> speaker_ids() const;
  int speaker_index(const std::string& id) const;
};

// Manifest: one record per line, `id | speaker_id | emotion_label |
// text_token_csv | feature_file`. Feature files hold u32 frames, u32 bins,
// then row-major float32, little-endian. Relative feature paths resolve
// against the manifest directory.
Corpus load_manifest(const std::string& path, bool training_mode = true);
void save_manifest(const Corpus& corpus, const std::string& dir,
                   const std::string& manifest_name = "manifest.txt");

Mat load_feature_file(const std::string& path);
void save_feature_file(const std::string& path, const Mat& mel);

struct SynthSpec {
  uint64_t seed = 1234;
  int n_speakers = 3;
  int utts_per_speaker = 8;
  int frames_min = 40;
  int frames_max = 72;
  int d_mel = 80;
  int v_text = 32;
  int n_contents = 4;  // distinct text contents cycled across utterances
  float noise_std = 0.02f;
};

// Deterministic synthetic corpus. Speaker identity is a fixed low-band
// spectral bump per speaker index, emotion an upper-band bump plus a
// temporal modulation per emotion index; both survive mean-frame pooling so
// small classifiers can recover them. Text tokens depend only on content id.
Corpus synth_corpus(const SynthSpec& spec);

// Frame-axis linear resampling; output has round(F / r) frames.
Mat speed_perturb(const Mat& mel, double r);

struct PromptTargetPair {
  int prompt_idx = -1;
  int target_idx = -1;
};

// Uniform over ordered pairs of distinct utterances of one speaker.
PromptTargetPair partition_pair(const Corpus& corpus, const std::string& speaker_id, Rng& rng);

struct PromptTargetSplit {
  Mat prompt;  // prefix
  Mat target;  // suffix
  int split_frame = 0;
};

// Uniform split point in [min_frames, F - min_frames].
PromptTargetSplit split_prompt_target(const Mat& mel, Rng& rng, int min_frames);

// Mean mel frame per utterance; the shared feature for nearest-centroid checks.
Vec mean_frame(const Mat& mel);

// Nearest-centroid classification helpers used by separability oracles and
// evaluation harnesses.
struct CentroidClassifier {
  std::vector<Vec> centroids;
  int classify(const Vec& feature) const;
};
CentroidClassifier fit_speaker_centroids(const Corpus& corpus);
CentroidClassifier fit_emotion_centroids(const Corpus& corpus);

}  // namespace dtts::corpus
