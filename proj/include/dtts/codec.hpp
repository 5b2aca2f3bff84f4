#pragma once

#include "dtts/corpus.hpp"
#include "dtts/nn.hpp"

#include <string>
#include <vector>

namespace dtts::codec {

struct SemanticTokenSeq {
  std::vector<int> tokens;  // content indices in [0, v_sem); never the terminator
  bool terminated_eos = false;
};

struct CodecConfig {
  int v_sem = 64;
  int d_code = 16;
  int downsample = 4;  // frames per token
  int d_mel = 80;
  float commit_weight = 0.25f;
  int kmeans_iters = 25;
  int finetune_steps = 600;
  int batch = 32;
  float lr = 1e-3f;
  uint64_t seed = 99;
  float plateau_tol = 1e-4f;  // stop fine-tune when relative MSE improvement falls below
  int plateau_window = 50;
};

// Windowed VQ encoder over mel frames: each non-overlapping `downsample`-frame
// window is projected to d_code and snapped to the nearest codebook row.
struct CodecModel {
  CodecConfig cfg;
  Mat enc_w;     // (downsample*d_mel) x d_code
  Mat enc_b;     // 1 x d_code
  Mat dec_w;     // d_code x (downsample*d_mel)
  Mat dec_b;     // 1 x (downsample*d_mel)
  Mat codebook;  // v_sem x d_code

  Vec encode_window(const Vec& window) const;  // window is 1 x (downsample*d_mel)
  int nearest_code(const Vec& z) const;
};

CodecModel train_vq(const corpus::Corpus& corpus, const CodecConfig& cfg);

SemanticTokenSeq encode(const CodecModel& model, const Mat& mel);

// Reconstruction of one window from a codebook row (decoder path); exposed for
// diagnostics and the quantization idempotence property.
Mat decode_tokens(const CodecModel& model, const SemanticTokenSeq& seq);

// Embedding lookup: row i of the result is table row seq.tokens[i]. The table
// is the downstream model's learned semantic-token embedding (width D).
Mat embed_tokens(const Mat& table, const SemanticTokenSeq& seq);

// Fraction of codebook entries used when encoding the whole corpus.
double codebook_usage(const CodecModel& model, const corpus::Corpus& corpus);

double reconstruction_mse(const CodecModel& model, const corpus::Corpus& corpus);

// Versioned binary checkpoint, magic `DTC1`.
void save_codec(const std::string& path, const CodecModel& model);
CodecModel load_codec(const std::string& path);
std::string serialize_codec(const CodecModel& model);
CodecModel deserialize_codec(const std::string& blob);

}  // namespace dtts::codec
