#pragma once

#include "dtts/common.hpp"

#include <complex>
#include <string>
#include <vector>

namespace dtts::dsp {

// In-place radix-2 FFT; size must be a power of two.
void fft(std::vector<std::complex<float>>& x, bool inverse);

struct AnalysisConfig {
  int sample_rate = 16000;
  int n_fft = 512;
  int hop = 128;
  int n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
  float log_floor = 1e-5f;  // mel = log(power + log_floor)
};

// Triangular mel filterbank, rows are mel bands over n_fft/2+1 linear bins.
Mat mel_filterbank(const AnalysisConfig& cfg);

// Hann-windowed magnitude STFT, frames x (n_fft/2+1).
Mat stft_magnitude(const std::vector<float>& wav, const AnalysisConfig& cfg);

// Log-mel features of a waveform under this module's analysis parameters.
Mat mel_analyze(const std::vector<float>& wav, const AnalysisConfig& cfg);

// Iterative phase reconstruction from a log-mel matrix, zero-phase init.
std::vector<float> griffin_lim(const Mat& logmel, int iters, const AnalysisConfig& cfg);

// || |STFT(wav)| - target ||_F / ||target||_F.
double spectral_convergence(const std::vector<float>& wav, const Mat& target_magnitude,
                            const AnalysisConfig& cfg);

// Demo renderer: one oscillator per mel band, amplitude follows the mel value.
std::vector<float> render_sinusoids(const Mat& mel, const AnalysisConfig& cfg);

void write_wav16(const std::string& path, const std::vector<float>& samples, int sample_rate);
std::vector<float> read_wav16(const std::string& path, int* sample_rate = nullptr);

}  // namespace dtts::dsp
