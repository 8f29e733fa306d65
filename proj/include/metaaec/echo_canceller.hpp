#pragma once

#include "metaaec/autodiff.hpp"
#include "metaaec/dsp.hpp"
#include "metaaec/tensor.hpp"

namespace metaaec::aec {

// Multi-block frequency-domain filter applied with overlap-save. K-point
// blocks advance by R = K/2 samples; the filter spans B blocks (B*R taps).
struct AecConfig {
  int fft_size = 1024;  // K
  int blocks = 4;       // B
  bool grad_constraint = false;

  int hop() const { return fft_size / 2; }
  void validate() const;
};

struct FilterState {
  Tensor theta;                    // K x B complex coefficients
  std::vector<double> u_samples;   // last K playback samples
  std::vector<double> d_samples;   // last K mixture samples
  std::vector<Tensor> u_spec_ring; // index b = spectrum at frame tau-b
  int64_t frame_index = 0;
};

FilterState make_filter_state(const AecConfig& cfg);

// Frame constants derived from the raw sample blocks; these carry no
// gradient and are shared by the value and tape paths.
struct StepData {
  Tensor u_stack;  // K x B, column b = playback spectrum at tau-b
  Tensor d_spec;   // K
};

// Shifts the state's sample buffers by one hop and computes the new frame
// spectra. Blocks must contain exactly R samples.
StepData advance_buffers(const AecConfig& cfg, FilterState& state,
                         const std::vector<double>& u_block,
                         const std::vector<double>& d_block);

struct StepVars {
  ad::Var y_spec;  // K
  ad::Var e_spec;  // K
  ad::Var e_time;  // R real residual samples
  ad::Var grad;    // K x B
};

// Records one filter step: y_k = sum_b theta[k,b] u[k,tau-b], e = d - y,
// e_time = last R samples of the inverse transform of e_spec.
StepVars filter_step_on_tape(const AecConfig& cfg, ad::Tape& tape, ad::Var theta,
                             const StepData& data);

// grad[k,b] = -conj(u[k,tau-b]) * e[k]; with the anti-alias constraint the
// per-block gradient is projected through transform -> zero upper time half
// -> transform.
ad::Var filter_gradient_on_tape(const AecConfig& cfg, ad::Tape& tape, ad::Var e_spec,
                                const Tensor& u_stack);

struct StepOutput {
  Tensor y_spec;
  Tensor e_spec;
  std::vector<double> e_time;
  Tensor grad;
};

// Value-level streaming step; mutates the state's buffers (theta unchanged).
StepOutput filter_step(const AecConfig& cfg, FilterState& state,
                       const std::vector<double>& u_block,
                       const std::vector<double>& d_block);

Tensor filter_gradient(const AecConfig& cfg, const Tensor& u_stack, const Tensor& e_spec);

// theta[tau+1] = theta[tau] + delta.
void apply_update(FilterState& state, const Tensor& delta);

// Partitions a time-domain filter (up to B*R taps) into the K x B
// frequency-domain representation: column b = DFT of taps [b*R, (b+1)*R)
// zero-padded to K.
Tensor partition_filter(const AecConfig& cfg, const std::vector<double>& w);

}  // namespace metaaec::aec
