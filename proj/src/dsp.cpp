#include "metaaec/dsp.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace metaaec::dsp {

namespace {

bool is_pow2(int n) { return n > 0 && (n & (n - 1)) == 0; }

struct FftPlan {
  int n = 0;
  std::vector<int> bitrev;
  std::vector<Complex> twiddle;  // exp(-2*pi*i*k/n) for k < n/2

  explicit FftPlan(int n_) : n(n_), bitrev(n_), twiddle(n_ / 2) {
    int logn = 0;
    while ((1 << logn) < n) ++logn;
    for (int i = 0; i < n; ++i) {
      int r = 0;
      for (int b = 0; b < logn; ++b)
        if (i & (1 << b)) r |= 1 << (logn - 1 - b);
      bitrev[i] = r;
    }
    for (int k = 0; k < n / 2; ++k) {
      double ang = -2.0 * M_PI * k / n;
      twiddle[k] = Complex(std::cos(ang), std::sin(ang));
    }
  }
};

const FftPlan& plan_for(int n) {
  static std::mutex mu;
  static std::map<int, std::unique_ptr<FftPlan>> plans;
  std::lock_guard<std::mutex> lock(mu);
  auto it = plans.find(n);
  if (it == plans.end()) it = plans.emplace(n, std::make_unique<FftPlan>(n)).first;
  return *it->second;
}

}  // namespace

void fft_inplace(std::vector<Complex>& a, bool inverse) {
  const int n = static_cast<int>(a.size());
  if (n <= 1) return;
  if (!is_pow2(n)) throw ConfigError("fft: length " + std::to_string(n) + " is not a power of two");
  const FftPlan& plan = plan_for(n);
  for (int i = 0; i < n; ++i) {
    int j = plan.bitrev[i];
    if (i < j) std::swap(a[i], a[j]);
  }
  for (int len = 2; len <= n; len <<= 1) {
    const int half = len >> 1;
    const int stride = n / len;
    for (int base = 0; base < n; base += len) {
      for (int k = 0; k < half; ++k) {
        Complex w = plan.twiddle[k * stride];
        if (inverse) w = std::conj(w);
        Complex u = a[base + k];
        Complex v = a[base + k + half] * w;
        a[base + k] = u + v;
        a[base + k + half] = u - v;
      }
    }
  }
  if (inverse) {
    const double s = 1.0 / n;
    for (auto& z : a) z *= s;
  }
}

std::vector<Complex> fft(const std::vector<Complex>& a) {
  std::vector<Complex> out = a;
  fft_inplace(out, false);
  return out;
}

std::vector<Complex> ifft(const std::vector<Complex>& a) {
  std::vector<Complex> out = a;
  fft_inplace(out, true);
  return out;
}

std::vector<std::vector<double>> frame_signal(const std::vector<double>& x, int window, int hop) {
  if (window <= 0 || hop <= 0 || hop > window)
    throw ConfigError("frame_signal: need window > 0 and 0 < hop <= window");
  std::vector<std::vector<double>> blocks;
  if (x.empty()) return blocks;
  const size_t count = (x.size() + hop - 1) / hop;
  blocks.reserve(count);
  for (size_t t = 0; t < count; ++t) {
    std::vector<double> b(window, 0.0);
    const size_t start = t * hop;
    for (int i = 0; i < window; ++i) {
      const size_t idx = start + i;
      if (idx < x.size()) b[i] = x[idx];
    }
    blocks.push_back(std::move(b));
  }
  return blocks;
}

std::vector<Complex> dft_real(const std::vector<double>& block) {
  if (!is_pow2(static_cast<int>(block.size())))
    throw ConfigError("dft_real: block length must be a power of two");
  std::vector<Complex> a(block.size());
  for (size_t i = 0; i < block.size(); ++i) a[i] = Complex(block[i], 0.0);
  fft_inplace(a, false);
  return a;
}

std::vector<double> idft_real(const std::vector<Complex>& spectrum) {
  std::vector<Complex> a = spectrum;
  fft_inplace(a, true);
  std::vector<double> out(a.size());
  for (size_t i = 0; i < a.size(); ++i) out[i] = a[i].real();
  return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<std::vector<double>> mel_filterbank(int bands, int nfft, double sample_rate) {
  const int nbins = nfft / 2 + 1;
  std::vector<std::vector<double>> fb(bands, std::vector<double>(nbins, 0.0));
  const double mel_lo = hz_to_mel(0.0);
  const double mel_hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(bands + 2);
  for (int i = 0; i < bands + 2; ++i)
    edges[i] = mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (bands + 1));
  for (int m = 0; m < bands; ++m) {
    const double f0 = edges[m], f1 = edges[m + 1], f2 = edges[m + 2];
    for (int k = 0; k < nbins; ++k) {
      const double f = k * sample_rate / nfft;
      if (f > f0 && f < f1)
        fb[m][k] = (f - f0) / (f1 - f0);
      else if (f >= f1 && f < f2)
        fb[m][k] = (f2 - f) / (f2 - f1);
    }
  }
  return fb;
}

std::vector<double> hann_window_periodic(int n) {
  std::vector<double> w(n);
  for (int i = 0; i < n; ++i) w[i] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / n));
  return w;
}

std::vector<MelFrame> mel_spectrogram(const RealSignal& x) {
  if (x.sample_rate != kSampleRate)
    throw ConfigError("mel_spectrogram: expected 16 kHz input, got " +
                      std::to_string(x.sample_rate));
  std::vector<MelFrame> frames;
  if (x.samples.empty()) return frames;
  static const std::vector<double> hann = hann_window_periodic(kMelWindow);
  static const std::vector<std::vector<double>> fb =
      mel_filterbank(kMelBands, kMelWindow, kSampleRate);
  const auto blocks = frame_signal(x.samples, kMelWindow, kMelHop);
  frames.reserve(blocks.size());
  std::vector<Complex> buf(kMelWindow);
  for (size_t t = 0; t < blocks.size(); ++t) {
    for (int i = 0; i < kMelWindow; ++i) buf[i] = Complex(blocks[t][i] * hann[i], 0.0);
    fft_inplace(buf, false);
    MelFrame f;
    f.frame_index = static_cast<int>(t);
    f.coeffs.resize(kMelBands);
    const int nbins = kMelWindow / 2 + 1;
    std::vector<double> power(nbins);
    for (int k = 0; k < nbins; ++k) power[k] = std::norm(buf[k]);
    for (int m = 0; m < kMelBands; ++m) {
      double e = 0.0;
      for (int k = 0; k < nbins; ++k) e += fb[m][k] * power[k];
      f.coeffs[m] = std::log(e + kMelLogFloor);
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<double> fir_filter(const std::vector<double>& x, const std::vector<double>& h) {
  std::vector<double> y(x.size(), 0.0);
  for (size_t t = 0; t < x.size(); ++t) {
    double acc = 0.0;
    const size_t mmax = std::min(h.size() - 1, t);
    for (size_t m = 0; m <= mmax; ++m) acc += h[m] * x[t - m];
    y[t] = acc;
  }
  return y;
}

}  // namespace metaaec::dsp
