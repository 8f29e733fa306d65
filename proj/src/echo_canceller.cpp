#include "metaaec/echo_canceller.hpp"

#include <algorithm>

namespace metaaec::aec {

using ad::Var;

void AecConfig::validate() const {
  if (fft_size < 4 || (fft_size & (fft_size - 1)) != 0)
    throw ConfigError("aec: fft_size must be a power of two >= 4");
  if (blocks < 1) throw ConfigError("aec: blocks must be >= 1");
}

FilterState make_filter_state(const AecConfig& cfg) {
  cfg.validate();
  FilterState st;
  st.theta = Tensor({cfg.fft_size, cfg.blocks});
  st.u_samples.assign(cfg.fft_size, 0.0);
  st.d_samples.assign(cfg.fft_size, 0.0);
  st.u_spec_ring.assign(cfg.blocks, Tensor({cfg.fft_size}));
  return st;
}

StepData advance_buffers(const AecConfig& cfg, FilterState& state,
                         const std::vector<double>& u_block,
                         const std::vector<double>& d_block) {
  const int K = cfg.fft_size;
  const int R = cfg.hop();
  if (static_cast<int>(u_block.size()) != R || static_cast<int>(d_block.size()) != R)
    throw UsageError("filter_step: expected exactly " + std::to_string(R) +
                     " samples per block, got u=" + std::to_string(u_block.size()) +
                     " d=" + std::to_string(d_block.size()));

  auto shift_in = [&](std::vector<double>& buf, const std::vector<double>& block) {
    std::copy(buf.begin() + R, buf.end(), buf.begin());
    std::copy(block.begin(), block.end(), buf.begin() + (K - R));
  };
  shift_in(state.u_samples, u_block);
  shift_in(state.d_samples, d_block);

  Tensor u_spec = Tensor::from_vector(dsp::dft_real(state.u_samples));
  state.u_spec_ring.insert(state.u_spec_ring.begin(), std::move(u_spec));
  state.u_spec_ring.pop_back();
  state.frame_index += 1;

  StepData data;
  data.u_stack = Tensor({K, cfg.blocks});
  for (int b = 0; b < cfg.blocks; ++b)
    for (int k = 0; k < K; ++k) data.u_stack.at(k, b) = state.u_spec_ring[b][k];
  data.d_spec = Tensor::from_vector(dsp::dft_real(state.d_samples));
  return data;
}

Var filter_gradient_on_tape(const AecConfig& cfg, ad::Tape& tape, Var e_spec,
                            const Tensor& u_stack) {
  const int K = cfg.fft_size;
  const int R = cfg.hop();
  Tensor u_conj = u_stack;
  for (int i = 0; i < u_conj.size(); ++i) u_conj[i] = std::conj(u_conj[i]);
  Var grad = ad::neg(ad::mul_col_bcast(e_spec, tape.constant(u_conj)));
  if (cfg.grad_constraint) {
    // Project each block through time domain, zeroing the aliased upper half.
    Tensor mask({cfg.blocks, K});
    for (int b = 0; b < cfg.blocks; ++b)
      for (int k = 0; k < R; ++k) mask.at(b, k) = Complex(1.0, 0.0);
    Var t = ad::ifft(ad::transpose(grad));
    Var masked = ad::mul(t, tape.constant(mask));
    grad = ad::transpose(ad::fft(masked));
  }
  return grad;
}

StepVars filter_step_on_tape(const AecConfig& cfg, ad::Tape& tape, Var theta,
                             const StepData& data) {
  const int K = cfg.fft_size;
  const int R = cfg.hop();
  StepVars out;
  Var u_stack = tape.constant(data.u_stack);
  out.y_spec = ad::row_sum(ad::mul(theta, u_stack));
  out.e_spec = ad::sub(tape.constant(data.d_spec), out.y_spec);
  out.e_time = ad::real(ad::slice(ad::ifft(out.e_spec), K - R, R));
  out.grad = filter_gradient_on_tape(cfg, tape, out.e_spec, data.u_stack);
  return out;
}

StepOutput filter_step(const AecConfig& cfg, FilterState& state,
                       const std::vector<double>& u_block,
                       const std::vector<double>& d_block) {
  StepData data = advance_buffers(cfg, state, u_block, d_block);
  ad::Tape tape;
  Var theta = tape.constant(state.theta);
  StepVars vars = filter_step_on_tape(cfg, tape, theta, data);
  StepOutput out;
  out.y_spec = tape.value(vars.y_spec);
  out.e_spec = tape.value(vars.e_spec);
  const Tensor& et = tape.value(vars.e_time);
  out.e_time.resize(et.size());
  for (int i = 0; i < et.size(); ++i) out.e_time[i] = et[i].real();
  out.grad = tape.value(vars.grad);
  return out;
}

Tensor filter_gradient(const AecConfig& cfg, const Tensor& u_stack, const Tensor& e_spec) {
  ad::Tape tape;
  Var e = tape.constant(e_spec);
  return tape.value(filter_gradient_on_tape(cfg, tape, e, u_stack));
}

void apply_update(FilterState& state, const Tensor& delta) {
  if (!delta.same_shape(state.theta))
    throw UsageError("apply_update: delta shape " + delta.shape_str() +
                     " does not match theta " + state.theta.shape_str());
  for (int i = 0; i < delta.size(); ++i) state.theta[i] += delta[i];
}

Tensor partition_filter(const AecConfig& cfg, const std::vector<double>& w) {
  const int K = cfg.fft_size;
  const int R = cfg.hop();
  if (static_cast<int>(w.size()) > cfg.blocks * R)
    throw UsageError("partition_filter: filter longer than B*R taps");
  Tensor theta({K, cfg.blocks});
  for (int b = 0; b < cfg.blocks; ++b) {
    std::vector<double> seg(K, 0.0);
    for (int i = 0; i < R; ++i) {
      const size_t tap = static_cast<size_t>(b) * R + i;
      if (tap < w.size()) seg[i] = w[tap];
    }
    auto spec = dsp::dft_real(seg);
    for (int k = 0; k < K; ++k) theta.at(k, b) = spec[k];
  }
  return theta;
}

}  // namespace metaaec::aec
