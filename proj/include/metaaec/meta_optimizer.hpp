#pragma once

#include <string>
#include <vector>

#include "metaaec/autodiff.hpp"
#include "metaaec/echo_canceller.hpp"
#include "metaaec/tensor.hpp"

namespace metaaec::opt {

// Learned per-frequency update rule. Frequencies are partitioned into
// overlapping groups; a shared recurrent core maps the compressed feature
// stack of each group to complex updates which are overlap-averaged back to
// per-frequency values and broadcast over filter blocks through learned
// per-block gains.
struct OptimizerConfig {
  int fft_size = 1024;  // K, must match the echo canceller
  int blocks = 4;       // B
  int hidden = 48;      // H
  int group_size = 5;
  int group_hop = 2;

  void validate() const;
  int effective_group_size() const { return std::min(group_size, fft_size); }
  std::vector<int> group_starts() const;
  int num_groups() const { return static_cast<int>(group_starts().size()); }
  int input_width() const { return 5 * effective_group_size(); }
};

// Complex Glorot init (independent re/im, variance 1/(2*fan_avg)) for all
// projection and recurrent weights; zero biases; per-block gains start at
// 0.1 so an untrained rule nudges the filter gently.
ParamSet init_optimizer_params(const OptimizerConfig& cfg, uint64_t seed);

// Recurrent hidden state, reset to zeros at stream start.
struct OptimizerState {
  Tensor h1;  // (num_groups, hidden)
  Tensor h2;
};

OptimizerState make_optimizer_state(const OptimizerConfig& cfg);

struct StreamContext {
  std::string stream_id = "stream";
  int64_t frame = 0;
};

struct OptimizerStepVars {
  ad::Var delta;  // K x B
  ad::Var h1;     // (G, H)
  ad::Var h2;
};

// Assembles the compressed feature stack [grad, u, d, e, y] from the filter
// step, runs the grouped recurrent core, and produces the additive update.
// Throws NumericError naming the stream and frame when features are not
// finite.
OptimizerStepVars optimizer_step_on_tape(const OptimizerConfig& cfg, ad::Tape& tape,
                                         const ad::TapeParams& params, ad::Var h1, ad::Var h2,
                                         const aec::StepVars& step, const aec::StepData& data,
                                         const StreamContext& ctx);

// Value-level step for inference streaming.
struct OptimizerStepOutput {
  Tensor delta;
  OptimizerState state;
};

OptimizerStepOutput optimizer_step(const OptimizerConfig& cfg, const ParamSet& params,
                                   const OptimizerState& state, const aec::StepOutput& step,
                                   const aec::StepData& data, const StreamContext& ctx);

// ln(1+|z|) * exp(i*angle(z)) applied to a plain tensor (the tape op
// ad::compress is the differentiable twin).
Tensor compress_features(const Tensor& t);

}  // namespace metaaec::opt
