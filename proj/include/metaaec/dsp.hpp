#pragma once

#include <vector>

#include "metaaec/common.hpp"

namespace metaaec::dsp {

inline constexpr int kSampleRate = 16000;
inline constexpr int kMelBands = 40;
inline constexpr int kMelWindow = 512;
inline constexpr int kMelHop = 256;
inline constexpr double kMelLogFloor = 1e-8;

// Time-domain signal at a fixed rate. Samples are stored as doubles in
// [-1, 1] when they come from PCM16 WAV.
struct RealSignal {
  std::vector<double> samples;
  int sample_rate = kSampleRate;
};

struct MelFrame {
  std::vector<double> coeffs;  // 40 log-mel energies
  int frame_index = 0;
};

// Splits x into blocks of `window` samples advancing by `hop`. Block t covers
// [t*hop, t*hop + window); the tail is zero-padded so the count is
// ceil(len/hop). Empty input gives no blocks.
std::vector<std::vector<double>> frame_signal(const std::vector<double>& x, int window, int hop);

// In-place radix-2 FFT over a power-of-two-length buffer.
void fft_inplace(std::vector<Complex>& a, bool inverse);

std::vector<Complex> fft(const std::vector<Complex>& a);
std::vector<Complex> ifft(const std::vector<Complex>& a);

// Full-size DFT of a real block: X[k] = sum_n x[n] exp(-2*pi*i*k*n/K).
// Block length must be a power of two.
std::vector<Complex> dft_real(const std::vector<double>& block);

// Inverse of dft_real; returns the real part of the inverse transform.
std::vector<double> idft_real(const std::vector<Complex>& spectrum);

// HTK mel scale.
double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Triangular mel filterbank over the non-redundant bins of an `nfft`-point
// transform: `bands` rows by (nfft/2 + 1) columns, peak weight 1.
std::vector<std::vector<double>> mel_filterbank(int bands, int nfft, double sample_rate);

// 40-band log-mel spectrogram with a 512-point periodic Hann window and a
// 256-point hop; frame count is ceil(len/hop). Energies get a 1e-8 floor
// added before the natural log.
std::vector<MelFrame> mel_spectrogram(const RealSignal& x);

std::vector<double> hann_window_periodic(int n);

// Direct time-domain FIR convolution, y[t] = sum_m h[m] x[t-m], output length
// equals the input length (tail truncated).
std::vector<double> fir_filter(const std::vector<double>& x, const std::vector<double>& h);

}  // namespace metaaec::dsp
