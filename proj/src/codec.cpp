#include "dtts/codec.hpp"

#include "dtts/autodiff.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dtts::codec {

namespace {

// All non-overlapping windows of the corpus, one row per window.
Mat collect_windows(const corpus::Corpus& corpus, const CodecConfig& cfg) {
  const int w = cfg.downsample * cfg.d_mel;
  int count = 0;
  for (const auto& u : corpus.utterances) count += int(u.mel.rows()) / cfg.downsample;
  if (count == 0) throw std::runtime_error("train_vq: corpus has no full windows");
  Mat out(count, w);
  int r = 0;
  for (const auto& u : corpus.utterances) {
    const int n = int(u.mel.rows()) / cfg.downsample;
    for (int t = 0; t < n; ++t) {
      for (int f = 0; f < cfg.downsample; ++f)
        out.block(r, f * cfg.d_mel, 1, cfg.d_mel) = u.mel.row(t * cfg.downsample + f);
      ++r;
    }
  }
  return out;
}

int count_distinct_rows(const Mat& m) {
  std::vector<int> order(m.rows());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int c = 0; c < m.cols(); ++c) {
      if (m(a, c) != m(b, c)) return m(a, c) < m(b, c);
    }
    return false;
  });
  int distinct = m.rows() > 0 ? 1 : 0;
  for (int i = 1; i < int(order.size()); ++i)
    if (m.row(order[size_t(i)]) != m.row(order[size_t(i - 1)])) ++distinct;
  return distinct;
}

int nearest_row(const Mat& codebook, const Vec& z) {
  int best = 0;
  float best_d = (z - codebook.row(0)).squaredNorm();
  for (int k = 1; k < codebook.rows(); ++k) {
    const float d = (z - codebook.row(k)).squaredNorm();
    if (d < best_d) {
      best = k;
      best_d = d;
    }
  }
  return best;
}

// k-means++ seeding followed by Lloyd iterations; empty clusters are reseeded
// to the point farthest from its current center.
Mat kmeans(const Mat& points, int k, int iters, Rng& rng) {
  const int n = int(points.rows());
  Mat centers(k, points.cols());
  centers.row(0) = points.row(rng.uniform_int(0, n - 1));
  std::vector<float> d2(static_cast<size_t>(n), 0.0f);
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      float best = (points.row(i) - centers.row(0)).squaredNorm();
      for (int j = 1; j < c; ++j)
        best = std::min(best, (points.row(i) - centers.row(j)).squaredNorm());
      d2[size_t(i)] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.row(c) = points.row(rng.uniform_int(0, n - 1));
      continue;
    }
    double pick = rng.uniform() * total;
    int chosen = n - 1;
    for (int i = 0; i < n; ++i) {
      pick -= d2[size_t(i)];
      if (pick <= 0.0) {
        chosen = i;
        break;
      }
    }
    centers.row(c) = points.row(chosen);
  }

  std::vector<int> assign(size_t(n), 0);
  for (int it = 0; it < iters; ++it) {
    for (int i = 0; i < n; ++i) {
      Vec p = points.row(i);
      assign[size_t(i)] = nearest_row(centers, p);
    }
    Mat sums = Mat::Zero(k, points.cols());
    std::vector<int> counts(size_t(k), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[size_t(i)]) += points.row(i);
      ++counts[size_t(assign[size_t(i)])];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[size_t(c)] > 0) {
        centers.row(c) = sums.row(c) / float(counts[size_t(c)]);
      } else {
        int far = 0;
        float far_d = -1.0f;
        for (int i = 0; i < n; ++i) {
          const float d = (points.row(i) - centers.row(assign[size_t(i)])).squaredNorm();
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers.row(c) = points.row(far);
      }
    }
  }
  return centers;
}

}  // namespace

Vec CodecModel::encode_window(const Vec& window) const {
  return window * enc_w + enc_b.row(0);
}

int CodecModel::nearest_code(const Vec& z) const { return nearest_row(codebook, z); }

CodecModel train_vq(const corpus::Corpus& corpus, const CodecConfig& cfg) {
  if (corpus.utterances.empty()) throw std::runtime_error("train_vq: empty corpus");
  const Mat windows = collect_windows(corpus, cfg);
  if (count_distinct_rows(windows) < cfg.v_sem)
    throw std::runtime_error("train_vq: v_sem (" + std::to_string(cfg.v_sem) +
                             ") exceeds the number of distinct training windows");

  Rng rng(cfg.seed);
  const int w = cfg.downsample * cfg.d_mel;

  CodecModel model;
  model.cfg = cfg;
  model.enc_w = randn(rng, w, cfg.d_code, 1.0f / std::sqrt(float(w)));
  model.enc_b = Mat::Zero(1, cfg.d_code);
  model.dec_b = Mat::Zero(1, w);

  // Seed the codebook with k-means over initial encodings, then fit the
  // decoder by least squares before joint fine-tuning.
  Mat z0 = windows * model.enc_w;
  model.codebook = kmeans(z0, cfg.v_sem, cfg.kmeans_iters, rng);
  {
    Eigen::MatrixXf a = z0.cast<float>();
    Eigen::MatrixXf at_a = a.transpose() * a +
                           0.01f * Eigen::MatrixXf::Identity(cfg.d_code, cfg.d_code);
    model.dec_w = at_a.ldlt().solve(a.transpose() * windows);
  }

  // Straight-through fine-tune of encoder, decoder, and codebook.
  auto enc_w_p = ad::param(model.enc_w);
  auto enc_b_p = ad::param(model.enc_b);
  auto dec_w_p = ad::param(model.dec_w);
  auto dec_b_p = ad::param(model.dec_b);
  auto code_p = ad::param(model.codebook);
  std::vector<ad::Value> params = {enc_w_p, enc_b_p, dec_w_p, dec_b_p, code_p};
  nn::AdamW opt;
  opt.lr = cfg.lr;

  const int n = int(windows.rows());
  std::vector<double> recent;
  double prev_avg = -1.0;
  for (int step = 0; step < cfg.finetune_steps; ++step) {
    std::vector<int> batch_idx;
    for (int b = 0; b < cfg.batch; ++b) batch_idx.push_back(rng.uniform_int(0, n - 1));
    Mat x(cfg.batch, w);
    for (int b = 0; b < cfg.batch; ++b) x.row(b) = windows.row(batch_idx[size_t(b)]);

    auto xc = ad::constant(x);
    auto z = ad::add(ad::matmul(xc, enc_w_p), enc_b_p);
    std::vector<int> codes(size_t(cfg.batch));
    Mat q(cfg.batch, cfg.d_code);
    for (int b = 0; b < cfg.batch; ++b) {
      Vec zb = z->val.row(b);
      codes[size_t(b)] = nearest_row(code_p->val, zb);
      q.row(b) = code_p->val.row(codes[size_t(b)]);
    }
    auto z_q = ad::straight_through(z, q);
    auto recon = ad::add(ad::matmul(z_q, dec_w_p), dec_b_p);

    auto diff = ad::sub(recon, xc);
    auto recon_loss = ad::mean_all(ad::mul(diff, diff));
    auto commit = ad::sub(z, ad::constant(q));
    auto commit_loss = ad::mean_all(ad::mul(commit, commit));
    auto code_rows = ad::rows(code_p, codes);
    auto code_diff = ad::sub(code_rows, ad::constant(z->val));
    auto code_loss = ad::mean_all(ad::mul(code_diff, code_diff));
    auto loss = ad::add(ad::add(recon_loss, ad::scale(commit_loss, cfg.commit_weight)),
                        code_loss);

    nn::zero_grads(params);
    ad::backward(loss);
    opt.step(params);

    recent.push_back(double(recon_loss->scalar()));
    if (int(recent.size()) == cfg.plateau_window) {
      const double avg =
          std::accumulate(recent.begin(), recent.end(), 0.0) / double(recent.size());
      recent.clear();
      if (prev_avg > 0.0 && (prev_avg - avg) / prev_avg < cfg.plateau_tol) break;
      prev_avg = avg;
    }
  }

  model.enc_w = enc_w_p->val;
  model.enc_b = enc_b_p->val;
  model.dec_w = dec_w_p->val;
  model.dec_b = dec_b_p->val;
  model.codebook = code_p->val;
  return model;
}

SemanticTokenSeq encode(const CodecModel& model, const Mat& mel) {
  const int ds = model.cfg.downsample;
  if (int(mel.rows()) < ds)
    throw std::runtime_error("encode: need at least " + std::to_string(ds) + " frames, got " +
                             std::to_string(mel.rows()));
  if (int(mel.cols()) != model.cfg.d_mel)
    throw std::runtime_error("encode: mel bin count mismatch");
  const int n_tok = int(mel.rows()) / ds;
  SemanticTokenSeq seq;
  seq.tokens.reserve(size_t(n_tok));
  Vec window(ds * model.cfg.d_mel);
  for (int t = 0; t < n_tok; ++t) {
    for (int f = 0; f < ds; ++f)
      window.segment(f * model.cfg.d_mel, model.cfg.d_mel) = mel.row(t * ds + f);
    seq.tokens.push_back(model.nearest_code(model.encode_window(window)));
  }
  seq.terminated_eos = true;
  return seq;
}

Mat decode_tokens(const CodecModel& model, const SemanticTokenSeq& seq) {
  const int ds = model.cfg.downsample;
  Mat mel(int(seq.tokens.size()) * ds, model.cfg.d_mel);
  for (size_t t = 0; t < seq.tokens.size(); ++t) {
    const int tok = seq.tokens[t];
    if (tok < 0 || tok >= model.cfg.v_sem) throw std::runtime_error("decode_tokens: index out of range");
    Vec window = model.codebook.row(tok) * model.dec_w + model.dec_b.row(0);
    for (int f = 0; f < ds; ++f)
      mel.row(int(t) * ds + f) = window.segment(f * model.cfg.d_mel, model.cfg.d_mel);
  }
  return mel;
}

Mat embed_tokens(const Mat& table, const SemanticTokenSeq& seq) {
  Mat out(int(seq.tokens.size()), table.cols());
  for (size_t i = 0; i < seq.tokens.size(); ++i) {
    const int tok = seq.tokens[i];
    if (tok < 0 || tok >= table.rows())
      throw std::runtime_error("embed_tokens: index " + std::to_string(tok) + " out of range");
    out.row(int(i)) = table.row(tok);
  }
  return out;
}

double codebook_usage(const CodecModel& model, const corpus::Corpus& corpus) {
  std::vector<bool> used(size_t(model.cfg.v_sem), false);
  for (const auto& u : corpus.utterances)
    for (int tok : encode(model, u.mel).tokens) used[size_t(tok)] = true;
  int n = 0;
  for (bool b : used) n += b ? 1 : 0;
  return double(n) / double(model.cfg.v_sem);
}

double reconstruction_mse(const CodecModel& model, const corpus::Corpus& corpus) {
  const Mat windows = collect_windows(corpus, model.cfg);
  double total = 0.0;
  for (int i = 0; i < windows.rows(); ++i) {
    Vec z = model.encode_window(windows.row(i));
    Vec q = model.codebook.row(model.nearest_code(z));
    Vec recon = q * model.dec_w + model.dec_b.row(0);
    total += double((recon - Vec(windows.row(i))).squaredNorm()) / double(windows.cols());
  }
  return total / double(windows.rows());
}

static constexpr char kMagic[4] = {'D', 'T', 'C', '1'};

std::string serialize_codec(const CodecModel& model) {
  ByteWriter w;
  w.put_bytes(kMagic, 4);
  w.put_u32(1);  // version
  w.put_u32(uint32_t(model.cfg.v_sem));
  w.put_u32(uint32_t(model.cfg.d_code));
  w.put_u32(uint32_t(model.cfg.downsample));
  w.put_u32(uint32_t(model.cfg.d_mel));
  w.put_mat(model.codebook);
  w.put_mat(model.enc_w);
  w.put_mat(model.enc_b);
  w.put_mat(model.dec_w);
  w.put_mat(model.dec_b);
  return std::move(w.buf);
}

CodecModel deserialize_codec(const std::string& blob) {
  ByteReader r(blob);
  char magic[4];
  r.get_bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) throw std::runtime_error("codec checkpoint: bad magic");
  const uint32_t version = r.get_u32();
  if (version != 1) throw std::runtime_error("codec checkpoint: unsupported version");
  CodecModel m;
  m.cfg.v_sem = int(r.get_u32());
  m.cfg.d_code = int(r.get_u32());
  m.cfg.downsample = int(r.get_u32());
  m.cfg.d_mel = int(r.get_u32());
  m.codebook = r.get_mat();
  m.enc_w = r.get_mat();
  m.enc_b = r.get_mat();
  m.dec_w = r.get_mat();
  m.dec_b = r.get_mat();
  return m;
}

void save_codec(const std::string& path, const CodecModel& model) {
  write_file(path, serialize_codec(model));
}

CodecModel load_codec(const std::string& path) { return deserialize_codec(read_file(path)); }

}  // namespace dtts::codec
