#pragma once

#include <string>

#include "metaaec/dsp.hpp"

namespace metaaec::wav {

// Reads mono 16-bit PCM WAV at 16 kHz. Any other rate, channel count, or
// sample format is rejected with an IoError naming the file and the problem.
dsp::RealSignal read_wav(const std::string& path);

// Writes mono 16-bit PCM; samples are clamped to [-1, 1].
void write_wav(const std::string& path, const dsp::RealSignal& sig);

}  // namespace metaaec::wav
