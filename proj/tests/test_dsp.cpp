#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "metaaec/dsp.hpp"
#include "metaaec/wav.hpp"

using namespace metaaec;
using namespace metaaec::dsp;

namespace {

// Naive O(K^2) DFT used as the independent oracle for the fast transform.
std::vector<Complex> naive_dft(const std::vector<double>& x) {
  const size_t n = x.size();
  std::vector<Complex> out(n);
  for (size_t k = 0; k < n; ++k) {
    Complex s(0.0, 0.0);
    for (size_t m = 0; m < n; ++m) {
      const double ang = -2.0 * M_PI * static_cast<double>(k * m) / n;
      s += x[m] * Complex(std::cos(ang), std::sin(ang));
    }
    out[k] = s;
  }
  return out;
}

Rng make_rng(uint64_t seed) { return Rng(seed); }

}  // namespace

TEST_CASE("frame_signal zero input") {
  std::vector<double> x(1024, 0.0);
  auto blocks = frame_signal(x, 1024, 512);
  CHECK(blocks.size() == 2);
  for (const auto& b : blocks) {
    CHECK(b.size() == 1024);
    for (double v : b) CHECK(v == 0.0);
  }
}

TEST_CASE("frame_signal impulse bookkeeping") {
  std::vector<double> x = {1.0, 0.0, 0.0, 0.0};
  auto blocks = frame_signal(x, 4, 2);
  REQUIRE(blocks.size() == 2);
  CHECK(blocks[0] == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(blocks[1] == std::vector<double>{0.0, 0.0, 0.0, 0.0});
}

TEST_CASE("frame_signal matches indexed oracle") {
  Rng rng = make_rng(42);
  std::vector<double> x(5000);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);
  const int window = 1024, hop = 512;
  auto blocks = frame_signal(x, window, hop);
  const size_t expect_count = (x.size() + hop - 1) / hop;
  REQUIRE(blocks.size() == expect_count);
  for (size_t t = 0; t < blocks.size(); ++t) {
    for (int i = 0; i < window; ++i) {
      const size_t idx = t * hop + i;
      const double want = idx < x.size() ? x[idx] : 0.0;
      CHECK(blocks[t][i] == want);
    }
  }
}

TEST_CASE("frame_signal rejects bad config") {
  std::vector<double> x(16, 0.0);
  CHECK_THROWS_AS(frame_signal(x, 0, 1), ConfigError);
  CHECK_THROWS_AS(frame_signal(x, 8, 0), ConfigError);
  CHECK_THROWS_AS(frame_signal(x, 8, 9), ConfigError);
}

TEST_CASE("dft_real zero block and impulse") {
  std::vector<double> zeros(64, 0.0);
  auto z = dft_real(zeros);
  for (const auto& c : z) CHECK(std::abs(c) == 0.0);

  std::vector<double> imp(64, 0.0);
  imp[0] = 1.0;
  auto s = dft_real(imp);
  for (const auto& c : s) {
    CHECK(c.real() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(c.imag() == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("dft_real matches naive oracle") {
  Rng rng = make_rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<double> x(128);
    for (auto& v : x) v = rng.normal();
    auto fast = dft_real(x);
    auto slow = naive_dft(x);
    for (size_t k = 0; k < x.size(); ++k)
      CHECK(std::abs(fast[k] - slow[k]) < 1e-8 * (1.0 + std::abs(slow[k])));
  }
}

TEST_CASE("round trip and Parseval over random blocks") {
  Rng rng = make_rng(11);
  double worst_rt = 0.0, worst_pv = 0.0;
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> x(64);
    double ex = 0.0;
    for (auto& v : x) {
      v = rng.normal();
      ex += v * v;
    }
    auto spec = dft_real(x);
    auto back = idft_real(spec);
    double num = 0.0;
    double es = 0.0;
    for (size_t i = 0; i < x.size(); ++i) num += (x[i] - back[i]) * (x[i] - back[i]);
    for (const auto& c : spec) es += std::norm(c);
    worst_rt = std::max(worst_rt, std::sqrt(num / ex));
    worst_pv = std::max(worst_pv, std::abs(ex - es / x.size()) / ex);
  }
  CHECK(worst_rt < 1e-10);
  CHECK(worst_pv < 1e-8);
}

TEST_CASE("dft linearity") {
  Rng rng = make_rng(3);
  std::vector<double> a(32), b(32), sum(32);
  for (int i = 0; i < 32; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal();
    sum[i] = 2.0 * a[i] + 3.0 * b[i];
  }
  auto fa = dft_real(a), fb = dft_real(b), fs = dft_real(sum);
  for (int k = 0; k < 32; ++k)
    CHECK(std::abs(fs[k] - (2.0 * fa[k] + 3.0 * fb[k])) < 1e-10 * (1.0 + std::abs(fs[k])));
}

TEST_CASE("dft_real rejects non power of two") {
  std::vector<double> x(48, 0.0);
  CHECK_THROWS_AS(dft_real(x), ConfigError);
}

TEST_CASE("mel of silence hits the log floor") {
  RealSignal sig;
  sig.samples.assign(2048, 0.0);
  auto frames = mel_spectrogram(sig);
  REQUIRE(frames.size() == (2048 + kMelHop - 1) / kMelHop);
  for (const auto& f : frames) {
    REQUIRE(f.coeffs.size() == 40);
    for (double c : f.coeffs) CHECK(c == doctest::Approx(std::log(kMelLogFloor)).epsilon(1e-12));
  }
}

TEST_CASE("mel frame count follows padding policy") {
  RealSignal sig;
  sig.samples.assign(1000, 0.1);
  auto frames = mel_spectrogram(sig);
  CHECK(frames.size() == 4);  // ceil(1000/256)
  sig.samples.clear();
  CHECK(mel_spectrogram(sig).empty());
}

TEST_CASE("1 kHz tone lands in the right mel band") {
  RealSignal sig;
  sig.samples.resize(16000);
  for (size_t i = 0; i < sig.samples.size(); ++i)
    sig.samples[i] = 0.5 * std::sin(2.0 * M_PI * 1000.0 * i / kSampleRate);
  auto frames = mel_spectrogram(sig);

  // Oracle from filterbank geometry: the band whose center is nearest 1 kHz.
  const double mel_lo = hz_to_mel(0.0), mel_hi = hz_to_mel(kSampleRate / 2.0);
  int best_band = -1;
  double best_dist = 1e12;
  for (int m = 0; m < kMelBands; ++m) {
    const double center = mel_to_hz(mel_lo + (mel_hi - mel_lo) * (m + 1) / (kMelBands + 1));
    const double d = std::abs(center - 1000.0);
    if (d < best_dist) {
      best_dist = d;
      best_band = m;
    }
  }
  // Skip tail frames dominated by zero padding.
  for (size_t t = 0; t + 2 < frames.size(); ++t) {
    int argmax = 0;
    for (int m = 1; m < kMelBands; ++m)
      if (frames[t].coeffs[m] > frames[t].coeffs[argmax]) argmax = m;
    CHECK(argmax == best_band);
  }
}

TEST_CASE("doubling amplitude raises log-mel by 2 ln 2") {
  Rng rng = make_rng(5);
  RealSignal a;
  a.samples.resize(4096);
  for (auto& v : a.samples) v = 0.2 * rng.normal();
  RealSignal b = a;
  for (auto& v : b.samples) v *= 2.0;
  auto fa = mel_spectrogram(a);
  auto fb = mel_spectrogram(b);
  REQUIRE(fa.size() == fb.size());
  for (size_t t = 0; t < fa.size(); ++t)
    for (int m = 0; m < kMelBands; ++m)
      if (fa[t].coeffs[m] > std::log(kMelLogFloor) + 8.0)  // well above floor
        CHECK(fb[t].coeffs[m] - fa[t].coeffs[m] == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-4));
}

TEST_CASE("WAV round trip and format rejection") {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "metaaec_wav_test";
  fs::create_directories(dir);
  const std::string path = (dir / "tone.wav").string();

  RealSignal sig;
  sig.samples.resize(1600);
  for (size_t i = 0; i < sig.samples.size(); ++i)
    sig.samples[i] = 0.25 * std::sin(2.0 * M_PI * 440.0 * i / kSampleRate);
  wav::write_wav(path, sig);
  auto back = wav::read_wav(path);
  REQUIRE(back.samples.size() == sig.samples.size());
  CHECK(back.sample_rate == kSampleRate);
  for (size_t i = 0; i < sig.samples.size(); ++i)
    CHECK(std::abs(back.samples[i] - sig.samples[i]) < 1.0 / 32000.0);

  // 8 kHz file must be rejected.
  const std::string bad = (dir / "bad.wav").string();
  RealSignal wrong = sig;
  wrong.sample_rate = 8000;
  wav::write_wav(bad, wrong);
  CHECK_THROWS_AS(wav::read_wav(bad), IoError);
  CHECK_THROWS_AS(wav::read_wav((dir / "missing.wav").string()), IoError);
  fs::remove_all(dir);
}

TEST_CASE("fir_filter matches definition") {
  std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
  std::vector<double> h = {0.5, -1.0};
  auto y = fir_filter(x, h);
  CHECK(y[0] == doctest::Approx(0.5));
  CHECK(y[1] == doctest::Approx(1.0 - 1.0));
  CHECK(y[2] == doctest::Approx(1.5 - 2.0));
  CHECK(y[3] == doctest::Approx(2.0 - 3.0));
}
