#include "metaaec/wav.hpp"

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace metaaec::wav {

namespace {

uint32_t rd_u32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

uint16_t rd_u16(const unsigned char* p) {
  return static_cast<uint16_t>(p[0] | (p[1] << 8));
}

void wr_u32(std::ofstream& f, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  f.write(reinterpret_cast<const char*>(b), 4);
}

void wr_u16(std::ofstream& f, uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  f.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

dsp::RealSignal read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open WAV file: " + path);
  std::vector<unsigned char> raw((std::istreambuf_iterator<char>(f)),
                                 std::istreambuf_iterator<char>());
  if (raw.size() < 44 || std::memcmp(raw.data(), "RIFF", 4) != 0 ||
      std::memcmp(raw.data() + 8, "WAVE", 4) != 0)
    throw IoError("not a RIFF/WAVE file: " + path);

  size_t pos = 12;
  bool have_fmt = false;
  uint16_t format = 0, channels = 0, bits = 0;
  uint32_t rate = 0;
  dsp::RealSignal sig;
  bool have_data = false;
  while (pos + 8 <= raw.size()) {
    const char* id = reinterpret_cast<const char*>(raw.data() + pos);
    const uint32_t sz = rd_u32(raw.data() + pos + 4);
    const size_t body = pos + 8;
    if (body + sz > raw.size()) throw IoError("truncated WAV chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw IoError("malformed fmt chunk in " + path);
      format = rd_u16(raw.data() + body);
      channels = rd_u16(raw.data() + body + 2);
      rate = rd_u32(raw.data() + body + 4);
      bits = rd_u16(raw.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IoError("data chunk before fmt chunk in " + path);
      if (format != 1) throw IoError(path + ": only PCM WAV is supported");
      if (channels != 1) throw IoError(path + ": only mono WAV is supported, got " +
                                       std::to_string(channels) + " channels");
      if (bits != 16) throw IoError(path + ": only 16-bit PCM is supported, got " +
                                    std::to_string(bits) + " bits");
      if (rate != dsp::kSampleRate)
        throw IoError(path + ": expected 16000 Hz, got " + std::to_string(rate) + " Hz");
      const size_t n = sz / 2;
      sig.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t s = static_cast<int16_t>(rd_u16(raw.data() + body + 2 * i));
        sig.samples[i] = s / 32768.0;
      }
      sig.sample_rate = static_cast<int>(rate);
      have_data = true;
    }
    pos = body + sz + (sz & 1);
  }
  if (!have_data) throw IoError("no data chunk in " + path);
  return sig;
}

void write_wav(const std::string& path, const dsp::RealSignal& sig) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write WAV file: " + path);
  const uint32_t nbytes = static_cast<uint32_t>(sig.samples.size() * 2);
  f.write("RIFF", 4);
  wr_u32(f, 36 + nbytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  wr_u32(f, 16);
  wr_u16(f, 1);  // PCM
  wr_u16(f, 1);  // mono
  wr_u32(f, static_cast<uint32_t>(sig.sample_rate));
  wr_u32(f, static_cast<uint32_t>(sig.sample_rate * 2));
  wr_u16(f, 2);
  wr_u16(f, 16);
  f.write("data", 4);
  wr_u32(f, nbytes);
  for (double x : sig.samples) {
    const double c = std::clamp(x, -1.0, 1.0);
    const int16_t s = static_cast<int16_t>(std::lrint(c * 32767.0));
    unsigned char b[2] = {static_cast<unsigned char>(s & 0xff),
                          static_cast<unsigned char>((s >> 8) & 0xff)};
    f.write(reinterpret_cast<const char*>(b), 2);
  }
  if (!f) throw IoError("failed writing WAV file: " + path);
}

}  // namespace metaaec::wav
