#include "dtts/dsp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

namespace dtts::dsp {

namespace {

constexpr double kPi = 3.14159265358979323846;

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

std::vector<float> hann_window(int n) {
  std::vector<float> w(static_cast<size_t>(n), 0.0f);
  for (int i = 0; i < n; ++i) w[size_t(i)] = 0.5f - 0.5f * float(std::cos(2.0 * kPi * i / n));
  return w;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Complex spectrogram of one frame starting at `start` (zero padded).
void frame_fft(const std::vector<float>& wav, int start, const std::vector<float>& window,
               std::vector<std::complex<float>>& buf) {
  const int n = int(buf.size());
  for (int i = 0; i < n; ++i) {
    const int idx = start + i;
    const float s = (idx >= 0 && idx < int(wav.size())) ? wav[size_t(idx)] : 0.0f;
    buf[size_t(i)] = std::complex<float>(s * window[size_t(i)], 0.0f);
  }
  fft(buf, false);
}

}  // namespace

void fft(std::vector<std::complex<float>>& x, bool inverse) {
  const int n = int(x.size());
  if (!is_pow2(n)) throw std::runtime_error("fft: size must be a power of two");
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(x[size_t(i)], x[size_t(j)]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / len * (inverse ? 1.0 : -1.0);
    const std::complex<float> wlen(float(std::cos(ang)), float(std::sin(ang)));
    for (int i = 0; i < n; i += len) {
      std::complex<float> w(1.0f, 0.0f);
      for (int k = 0; k < len / 2; ++k) {
        const std::complex<float> u = x[size_t(i + k)];
        const std::complex<float> v = x[size_t(i + k + len / 2)] * w;
        x[size_t(i + k)] = u + v;
        x[size_t(i + k + len / 2)] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse)
    for (auto& v : x) v /= float(n);
}

Mat mel_filterbank(const AnalysisConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  Mat fb = Mat::Zero(cfg.n_mels, bins);
  const double mel_lo = hz_to_mel(cfg.fmin);
  const double mel_hi = hz_to_mel(cfg.fmax);
  std::vector<double> centers(size_t(cfg.n_mels) + 2);
  for (int m = 0; m < cfg.n_mels + 2; ++m)
    centers[size_t(m)] =
        mel_to_hz(mel_lo + (mel_hi - mel_lo) * double(m) / double(cfg.n_mels + 1));
  const double hz_per_bin = double(cfg.sample_rate) / double(cfg.n_fft);
  for (int m = 0; m < cfg.n_mels; ++m) {
    const double lo = centers[size_t(m)], mid = centers[size_t(m) + 1],
                 hi = centers[size_t(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double hz = b * hz_per_bin;
      double w = 0.0;
      if (hz >= lo && hz <= mid && mid > lo)
        w = (hz - lo) / (mid - lo);
      else if (hz > mid && hz <= hi && hi > mid)
        w = (hi - hz) / (hi - mid);
      fb(m, b) = float(w);
    }
  }
  return fb;
}

Mat stft_magnitude(const std::vector<float>& wav, const AnalysisConfig& cfg) {
  const int bins = cfg.n_fft / 2 + 1;
  const int frames = std::max(1, (int(wav.size()) + cfg.hop - 1) / cfg.hop);
  const auto window = hann_window(cfg.n_fft);
  std::vector<std::complex<float>> buf(size_t(cfg.n_fft));
  Mat mag(frames, bins);
  for (int f = 0; f < frames; ++f) {
    frame_fft(wav, f * cfg.hop - cfg.n_fft / 2, window, buf);
    for (int b = 0; b < bins; ++b) mag(f, b) = std::abs(buf[size_t(b)]);
  }
  return mag;
}

Mat mel_analyze(const std::vector<float>& wav, const AnalysisConfig& cfg) {
  const Mat mag = stft_magnitude(wav, cfg);
  const Mat fb = mel_filterbank(cfg);
  Mat power = mag.array().square();
  Mat mel = power * fb.transpose();  // frames x n_mels
  return (mel.array() + cfg.log_floor).log().matrix();
}

namespace {

std::vector<float> istft_from(const Mat& mag, const std::vector<Mat>& phase_parts,
                              const AnalysisConfig& cfg, int n_samples) {
  const auto& cosw = phase_parts[0];
  const auto& sinw = phase_parts[1];
  const auto window = hann_window(cfg.n_fft);
  std::vector<float> out(size_t(n_samples), 0.0f);
  std::vector<float> norm(size_t(n_samples), 0.0f);
  std::vector<std::complex<float>> buf(size_t(cfg.n_fft));
  const int bins = cfg.n_fft / 2 + 1;
  for (int f = 0; f < mag.rows(); ++f) {
    for (int b = 0; b < bins; ++b)
      buf[size_t(b)] = std::complex<float>(mag(f, b) * cosw(f, b), mag(f, b) * sinw(f, b));
    for (int b = bins; b < cfg.n_fft; ++b) buf[size_t(b)] = std::conj(buf[size_t(cfg.n_fft - b)]);
    fft(buf, true);
    const int start = f * cfg.hop - cfg.n_fft / 2;
    for (int i = 0; i < cfg.n_fft; ++i) {
      const int idx = start + i;
      if (idx < 0 || idx >= n_samples) continue;
      out[size_t(idx)] += buf[size_t(i)].real() * window[size_t(i)];
      norm[size_t(idx)] += window[size_t(i)] * window[size_t(i)];
    }
  }
  for (size_t i = 0; i < out.size(); ++i)
    if (norm[i] > 1e-8f) out[i] /= norm[i];
  return out;
}

}  // namespace

std::vector<float> griffin_lim(const Mat& logmel, int iters, const AnalysisConfig& cfg) {
  if (iters < 1) throw std::runtime_error("griffin_lim: iters must be >= 1");
  if (int(logmel.cols()) != cfg.n_mels) throw std::runtime_error("griffin_lim: mel band mismatch");
  const int frames = int(logmel.rows());
  const int bins = cfg.n_fft / 2 + 1;

  // Log-mel -> linear power via the filterbank pseudo-inverse, clamped.
  Mat mel_power = (logmel.array().exp() - cfg.log_floor).cwiseMax(0.0f).matrix();
  const Mat fb = mel_filterbank(cfg);
  Eigen::MatrixXf fbt = fb.transpose();
  Eigen::MatrixXf gram =
      fb * fbt + 1e-4f * Eigen::MatrixXf::Identity(cfg.n_mels, cfg.n_mels);
  Eigen::MatrixXf recover = fbt * gram.inverse();  // bins x n_mels
  Mat power = (mel_power * recover.transpose()).cwiseMax(0.0f);
  Mat mag = power.array().sqrt().matrix();

  const int n_samples = frames * cfg.hop;
  std::vector<Mat> phase = {Mat::Ones(frames, bins), Mat::Zero(frames, bins)};  // zero phase
  std::vector<float> wav;
  for (int it = 0; it < iters; ++it) {
    wav = istft_from(mag, phase, cfg, n_samples);
    // Re-estimate phase from the current signal.
    const auto window = hann_window(cfg.n_fft);
    std::vector<std::complex<float>> buf(size_t(cfg.n_fft));
    for (int f = 0; f < frames; ++f) {
      frame_fft(wav, f * cfg.hop - cfg.n_fft / 2, window, buf);
      for (int b = 0; b < bins; ++b) {
        const float a = std::abs(buf[size_t(b)]);
        if (a > 1e-12f) {
          phase[0](f, b) = buf[size_t(b)].real() / a;
          phase[1](f, b) = buf[size_t(b)].imag() / a;
        }
      }
    }
  }
  return istft_from(mag, phase, cfg, n_samples);
}

double spectral_convergence(const std::vector<float>& wav, const Mat& target_magnitude,
                            const AnalysisConfig& cfg) {
  Mat mag = stft_magnitude(wav, cfg);
  const int frames = std::min(int(mag.rows()), int(target_magnitude.rows()));
  double num = 0.0, den = 0.0;
  for (int f = 0; f < frames; ++f)
    for (int b = 0; b < mag.cols(); ++b) {
      const double d = double(mag(f, b)) - double(target_magnitude(f, b));
      num += d * d;
      den += double(target_magnitude(f, b)) * double(target_magnitude(f, b));
    }
  return den > 0.0 ? std::sqrt(num) / std::sqrt(den) : std::sqrt(num);
}

std::vector<float> render_sinusoids(const Mat& mel, const AnalysisConfig& cfg) {
  const Mat fb = mel_filterbank(cfg);
  const double hz_per_bin = double(cfg.sample_rate) / double(cfg.n_fft);
  std::vector<double> band_hz(size_t(cfg.n_mels), 0.0);
  for (int m = 0; m < cfg.n_mels; ++m) {
    int peak = 0;
    for (int b = 1; b < fb.cols(); ++b)
      if (fb(m, b) > fb(m, peak)) peak = b;
    band_hz[size_t(m)] = peak * hz_per_bin;
  }
  const int n = int(mel.rows()) * cfg.hop;
  std::vector<float> out(size_t(n), 0.0f);
  for (int m = 0; m < cfg.n_mels; ++m) {
    if (band_hz[size_t(m)] <= 0.0) continue;
    const double omega = 2.0 * kPi * band_hz[size_t(m)] / cfg.sample_rate;
    for (int i = 0; i < n; ++i) {
      const int frame = std::min(i / cfg.hop, int(mel.rows()) - 1);
      const float amp = std::exp(mel(frame, m)) - cfg.log_floor;
      if (amp <= 0.0f) continue;
      out[size_t(i)] += std::sqrt(amp) * float(std::sin(omega * i)) / float(cfg.n_mels);
    }
  }
  return out;
}

void write_wav16(const std::string& path, const std::vector<float>& samples, int sample_rate) {
  ByteWriter w;
  const uint32_t data_bytes = uint32_t(samples.size() * 2);
  w.put_bytes("RIFF", 4);
  w.put_u32(36 + data_bytes);
  w.put_bytes("WAVE", 4);
  w.put_bytes("fmt ", 4);
  w.put_u32(16);
  uint16_t fmt = 1, channels = 1, block = 2, bits = 16;
  w.put_bytes(&fmt, 2);
  w.put_bytes(&channels, 2);
  w.put_u32(uint32_t(sample_rate));
  w.put_u32(uint32_t(sample_rate) * 2);
  w.put_bytes(&block, 2);
  w.put_bytes(&bits, 2);
  w.put_bytes("data", 4);
  w.put_u32(data_bytes);
  for (float s : samples) {
    const float clamped = std::clamp(s, -1.0f, 1.0f);
    const int16_t q = int16_t(std::lround(clamped * 32767.0f));
    w.put_bytes(&q, 2);
  }
  write_file(path, w.buf);
}

std::vector<float> read_wav16(const std::string& path, int* sample_rate) {
  const std::string data = read_file(path);
  ByteReader r(data);
  char tag[4];
  r.get_bytes(tag, 4);
  if (std::memcmp(tag, "RIFF", 4) != 0) throw std::runtime_error("not a RIFF file: " + path);
  r.get_u32();
  r.get_bytes(tag, 4);
  if (std::memcmp(tag, "WAVE", 4) != 0) throw std::runtime_error("not a WAVE file: " + path);
  std::vector<float> out;
  while (r.pos + 8 <= data.size()) {
    r.get_bytes(tag, 4);
    const uint32_t size = r.get_u32();
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      uint16_t fmt, channels;
      r.get_bytes(&fmt, 2);
      r.get_bytes(&channels, 2);
      const uint32_t sr = r.get_u32();
      if (sample_rate != nullptr) *sample_rate = int(sr);
      r.pos += size - 8;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      out.resize(size / 2);
      for (auto& s : out) {
        int16_t q;
        r.get_bytes(&q, 2);
        s = float(q) / 32767.0f;
      }
      break;
    } else {
      r.pos += size;
    }
  }
  return out;
}

}  // namespace dtts::dsp
