#include "dtts/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace dtts {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write file: " + path);
  out.write(data.data(), std::streamsize(data.size()));
  if (!out) throw std::runtime_error("short write: " + path);
}

}  // namespace dtts

namespace dtts::corpus {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void Corpus::rebuild_index() {
  speakers.clear();
  for (int i = 0; i < int(utterances.size()); ++i)
    speakers[utterances[size_t(i)].speaker_id].push_back(i);
}

void Corpus::validate(bool training_mode) const {
  if (utterances.empty()) throw std::runtime_error("empty corpus");
  for (const auto& u : utterances) {
    if (u.mel.rows() < 2)
      throw std::runtime_error("utterance '" + u.id + "': needs at least 2 mel frames");
    if (u.emotion < 0 || u.emotion >= kNumEmotions)
      throw std::runtime_error("utterance '" + u.id + "': bad emotion index");
  }
  if (training_mode) {
    for (const auto& [spk, ids] : speakers)
      if (ids.size() < 2)
        throw std::runtime_error("speaker '" + spk +
                                 "' has fewer than 2 utterances; prompt/target "
                                 "partitioning requires at least 2");
  }
}

std::vector<std::string> Corpus::speaker_ids() const {
  std::vector<std::string> out;
  for (const auto& [spk, ids] : speakers) out.push_back(spk);
  return out;
}

int Corpus::speaker_index(const std::string& id) const {
  int i = 0;
  for (const auto& [spk, ids] : speakers) {
    if (spk == id) return i;
    ++i;
  }
  throw std::runtime_error("unknown speaker: '" + id + "'");
}

Mat load_feature_file(const std::string& path) {
  const std::string data = read_file(path);
  ByteReader r(data);
  const uint32_t frames = r.get_u32();
  const uint32_t bins = r.get_u32();
  if (data.size() != 8 + size_t(frames) * bins * 4)
    throw std::runtime_error("feature file '" + path + "': size does not match header");
  Mat m(frames, bins);
  r.get_bytes(m.data(), sizeof(float) * size_t(m.size()));
  return m;
}

void save_feature_file(const std::string& path, const Mat& mel) {
  ByteWriter w;
  w.put_u32(uint32_t(mel.rows()));
  w.put_u32(uint32_t(mel.cols()));
  w.put_bytes(mel.data(), sizeof(float) * size_t(mel.size()));
  write_file(path, w.buf);
}

Corpus load_manifest(const std::string& path, bool training_mode) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open manifest: " + path);
  const fs::path base = fs::path(path).parent_path();

  Corpus corpus;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto fields = split(t, '|');
    if (fields.size() != 5)
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": expected 5 '|' fields, got " +
                               std::to_string(fields.size()));
    Utterance u;
    u.id = trim(fields[0]);
    u.speaker_id = trim(fields[1]);
    if (u.id.empty() || u.speaker_id.empty())
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": empty id or speaker");
    try {
      u.emotion = emotion_index(trim(fields[2]));
    } catch (const std::exception& e) {
      throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    const std::string csv = trim(fields[3]);
    if (!csv.empty()) {
      for (const auto& tok : split(csv, ',')) {
        try {
          u.text_tokens.push_back(std::stoi(trim(tok)));
        } catch (const std::exception&) {
          throw std::runtime_error("manifest line " + std::to_string(line_no) + ": bad text token '" + tok + "'");
        }
      }
    }
    fs::path feat = trim(fields[4]);
    if (feat.is_relative()) feat = base / feat;
    u.mel = load_feature_file(feat.string());
    corpus.utterances.push_back(std::move(u));
  }
  if (corpus.utterances.empty()) throw std::runtime_error("empty corpus");
  corpus.rebuild_index();
  corpus.validate(training_mode);
  return corpus;
}

void save_manifest(const Corpus& corpus, const std::string& dir, const std::string& manifest_name) {
  fs::create_directories(dir);
  std::ostringstream manifest;
  for (const auto& u : corpus.utterances) {
    const std::string feat = u.id + ".mel";
    save_feature_file((fs::path(dir) / feat).string(), u.mel);
    manifest << u.id << " | " << u.speaker_id << " | " << emotion_name(u.emotion) << " | ";
    for (size_t i = 0; i < u.text_tokens.size(); ++i) {
      if (i) manifest << ",";
      manifest << u.text_tokens[i];
    }
    manifest << " | " << feat << "\n";
  }
  write_file((fs::path(dir) / manifest_name).string(), manifest.str());
}

namespace {

// Fixed per-speaker band in the lower half of the spectrum.
void add_speaker_bump(Mat& mel, int speaker, int n_speakers) {
  const int d = int(mel.cols());
  const float center = float(speaker + 1) * (0.5f * d) / float(n_speakers + 1);
  const float sigma = float(d) / 16.0f;
  for (int b = 0; b < d; ++b) {
    const float z = (float(b) - center) / sigma;
    const float bump = std::exp(-0.5f * z * z);
    for (int f = 0; f < mel.rows(); ++f) mel(f, b) += bump;
  }
}

// Emotion bump in the upper half plus a temporal modulation of the speaker band.
void add_emotion_pattern(Mat& mel, int emotion) {
  const int d = int(mel.cols());
  const float center = 0.5f * d + (float(emotion) + 0.5f) * (0.5f * d) / float(kNumEmotions);
  const float sigma = float(d) / 32.0f;
  const float rate = 0.04f * float(emotion + 1);
  for (int f = 0; f < mel.rows(); ++f) {
    const float am = 1.0f + 0.3f * std::sin(6.2831853f * rate * float(f));
    for (int b = 0; b < d; ++b) {
      const float z = (float(b) - center) / sigma;
      mel(f, b) = mel(f, b) * am + 0.6f * std::exp(-0.5f * z * z);
    }
  }
}

}  // namespace

Corpus synth_corpus(const SynthSpec& spec) {
  if (spec.n_speakers < 1) throw std::runtime_error("synth_corpus: n_speakers must be >= 1");
  if (spec.utts_per_speaker < 2)
    throw std::runtime_error("synth_corpus: utts_per_speaker must be >= 2");
  if (spec.frames_min < 2 || spec.frames_max < spec.frames_min)
    throw std::runtime_error("synth_corpus: bad frames range");

  Rng rng(spec.seed);
  Corpus corpus;
  for (int s = 0; s < spec.n_speakers; ++s) {
    for (int j = 0; j < spec.utts_per_speaker; ++j) {
      Utterance u;
      u.speaker_id = "spk" + std::to_string(s);
      u.id = u.speaker_id + "_u" + std::to_string(j);
      u.emotion = (j + s) % kNumEmotions;

      // Text depends only on the content id, so the same token sequence
      // appears under several emotions and speakers.
      const int content = j % std::max(1, spec.n_contents);
      Rng text_rng(0x7e3a00 + uint64_t(content));
      const int text_len = 6 + content % 5;
      for (int t = 0; t < text_len; ++t)
        u.text_tokens.push_back(text_rng.uniform_int(0, spec.v_text - 1));

      const int frames = rng.uniform_int(spec.frames_min, spec.frames_max);
      u.mel = Mat::Zero(frames, spec.d_mel);
      add_speaker_bump(u.mel, s, spec.n_speakers);
      add_emotion_pattern(u.mel, u.emotion);
      for (int f = 0; f < frames; ++f)
        for (int b = 0; b < spec.d_mel; ++b)
          u.mel(f, b) += float(rng.normal()) * spec.noise_std;
      corpus.utterances.push_back(std::move(u));
    }
  }
  corpus.rebuild_index();
  return corpus;
}

Mat speed_perturb(const Mat& mel, double r) {
  if (!(r > 0.0)) throw std::runtime_error("speed_perturb: factor must be > 0");
  const int f_in = int(mel.rows());
  const int f_out = std::max(1, int(std::llround(double(f_in) / r)));
  if (f_out == f_in && r == 1.0) return mel;
  Mat out(f_out, mel.cols());
  if (f_out == 1) {
    out.row(0) = mel.row(0);
    return out;
  }
  const double step = double(f_in - 1) / double(f_out - 1);
  for (int i = 0; i < f_out; ++i) {
    const double pos = double(i) * step;
    const int lo = std::min(int(pos), f_in - 1);
    const int hi = std::min(lo + 1, f_in - 1);
    const float frac = float(pos - double(lo));
    out.row(i) = (1.0f - frac) * mel.row(lo) + frac * mel.row(hi);
  }
  return out;
}

PromptTargetPair partition_pair(const Corpus& corpus, const std::string& speaker_id, Rng& rng) {
  auto it = corpus.speakers.find(speaker_id);
  if (it == corpus.speakers.end()) throw std::runtime_error("unknown speaker: '" + speaker_id + "'");
  const auto& ids = it->second;
  if (ids.size() < 2)
    throw std::runtime_error("speaker '" + speaker_id + "' has fewer than 2 utterances");
  const int a = rng.uniform_int(0, int(ids.size()) - 1);
  int b = rng.uniform_int(0, int(ids.size()) - 2);
  if (b >= a) ++b;
  return {ids[size_t(a)], ids[size_t(b)]};
}

PromptTargetSplit split_prompt_target(const Mat& mel, Rng& rng, int min_frames) {
  const int f = int(mel.rows());
  if (min_frames < 1) throw std::runtime_error("split_prompt_target: min_frames must be >= 1");
  if (f < 2 * min_frames)
    throw std::runtime_error("split_prompt_target: utterance too short (" + std::to_string(f) +
                             " frames, need " + std::to_string(2 * min_frames) + ")");
  const int split = rng.uniform_int(min_frames, f - min_frames);
  PromptTargetSplit out;
  out.split_frame = split;
  out.prompt = mel.topRows(split);
  out.target = mel.bottomRows(f - split);
  return out;
}

Vec mean_frame(const Mat& mel) { return mel.colwise().mean(); }

int CentroidClassifier::classify(const Vec& feature) const {
  int best = -1;
  float best_d = 0.0f;
  for (int k = 0; k < int(centroids.size()); ++k) {
    const float d = (feature - centroids[size_t(k)]).squaredNorm();
    if (best < 0 || d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

CentroidClassifier fit_speaker_centroids(const Corpus& corpus) {
  CentroidClassifier out;
  for (const auto& [spk, ids] : corpus.speakers) {
    Vec c = Vec::Zero(corpus.utterances[0].mel.cols());
    for (int i : ids) c += mean_frame(corpus.at(i).mel);
    out.centroids.push_back(c / float(ids.size()));
  }
  return out;
}

CentroidClassifier fit_emotion_centroids(const Corpus& corpus) {
  CentroidClassifier out;
  out.centroids.assign(kNumEmotions, Vec::Zero(corpus.utterances[0].mel.cols()));
  std::vector<int> counts(kNumEmotions, 0);
  for (const auto& u : corpus.utterances) {
    out.centroids[size_t(u.emotion)] += mean_frame(u.mel);
    ++counts[size_t(u.emotion)];
  }
  for (int e = 0; e < kNumEmotions; ++e) {
    if (counts[size_t(e)] == 0) throw std::runtime_error(std::string("no samples for emotion ") + emotion_name(e));
    out.centroids[size_t(e)] /= float(counts[size_t(e)]);
  }
  return out;
}

}  // namespace dtts::corpus
