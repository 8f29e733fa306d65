#include "metaaec/meta_optimizer.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

namespace metaaec::opt {

using ad::Var;

void OptimizerConfig::validate() const {
  if (fft_size < 1) throw ConfigError("optimizer: fft_size must be positive");
  if (blocks < 1) throw ConfigError("optimizer: blocks must be >= 1");
  if (hidden < 1) throw ConfigError("optimizer: hidden must be >= 1");
  if (group_size < 1 || group_hop < 1)
    throw ConfigError("optimizer: group size and hop must be >= 1");
}

std::vector<int> OptimizerConfig::group_starts() const {
  const int gs = effective_group_size();
  std::vector<int> starts;
  for (int s = 0; s + gs <= fft_size; s += group_hop) starts.push_back(s);
  // Clamp a final group to the end so every bin is covered.
  if (starts.empty() || starts.back() != fft_size - gs) starts.push_back(fft_size - gs);
  return starts;
}

namespace {

struct GroupPlan {
  std::vector<int> starts;
  std::shared_ptr<const std::vector<int>> gather_idx;   // (G * 5*gs) into 5K feature vector
  std::shared_ptr<const std::vector<int>> scatter_idx;  // (G * gs) into K bins
  Tensor inv_counts;                                    // K
};

const GroupPlan& plan_for(const OptimizerConfig& cfg) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int>, std::unique_ptr<GroupPlan>> cache;
  std::lock_guard<std::mutex> lock(mu);
  const auto key = std::make_tuple(cfg.fft_size, cfg.effective_group_size(), cfg.group_hop);
  auto it = cache.find(key);
  if (it != cache.end()) return *it->second;

  auto plan = std::make_unique<GroupPlan>();
  plan->starts = cfg.group_starts();
  const int gs = cfg.effective_group_size();
  const int K = cfg.fft_size;
  const int G = static_cast<int>(plan->starts.size());
  auto gidx = std::make_shared<std::vector<int>>();
  gidx->reserve(static_cast<size_t>(G) * 5 * gs);
  for (int g = 0; g < G; ++g)
    for (int s = 0; s < 5; ++s)
      for (int j = 0; j < gs; ++j) gidx->push_back(s * K + plan->starts[g] + j);
  auto sidx = std::make_shared<std::vector<int>>();
  sidx->reserve(static_cast<size_t>(G) * gs);
  std::vector<int> counts(K, 0);
  for (int g = 0; g < G; ++g)
    for (int j = 0; j < gs; ++j) {
      sidx->push_back(plan->starts[g] + j);
      counts[plan->starts[g] + j] += 1;
    }
  plan->gather_idx = std::move(gidx);
  plan->scatter_idx = std::move(sidx);
  plan->inv_counts = Tensor({K});
  for (int k = 0; k < K; ++k) plan->inv_counts[k] = Complex(1.0 / counts[k], 0.0);
  it = cache.emplace(key, std::move(plan)).first;
  return *it->second;
}

Tensor glorot_complex(std::vector<int> dims, Rng& rng) {
  Tensor t(std::move(dims));
  int fan_in = t.rank() == 2 ? t.dim(0) : t.size();
  int fan_out = t.rank() == 2 ? t.dim(1) : t.size();
  const double stddev = std::sqrt(1.0 / (fan_in + fan_out));
  for (int i = 0; i < t.size(); ++i)
    t[i] = Complex(stddev * rng.normal(), stddev * rng.normal());
  return t;
}

Var gru_cell(const ad::TapeParams& p, const std::string& prefix, Var x, Var h) {
  using namespace ad;
  Var z = sigmoid_split(add(add(matmul(x, p.at(prefix + ".wz")), matmul(h, p.at(prefix + ".uz"))),
                            reshape_bias(p, prefix + ".bz", x)));
  (void)z;
  return z;  // replaced below; see gru_cell_impl
}

// Real implementation; kept separate so the bias broadcast is explicit.
Var gru_cell_impl(ad::Tape& tape, const ad::TapeParams& p, const std::string& prefix, Var x,
                  Var h) {
  using namespace ad;
  auto gate = [&](const std::string& w, const std::string& u, const std::string& b, Var hh) {
    return add_row_vec(add(matmul(x, p.at(prefix + w)), matmul(hh, p.at(prefix + u))),
                       p.at(prefix + b));
  };
  Var z = sigmoid_split(gate(".wz", ".uz", ".bz", h));
  Var r = sigmoid_split(gate(".wr", ".ur", ".br", h));
  Var rh = mul(r, h);
  Var c = tanh_split(add_row_vec(
      add(matmul(x, p.at(prefix + ".wc")), matmul(rh, p.at(prefix + ".uc"))),
      p.at(prefix + ".bc")));
  const Tensor& hv = tape.value(h);
  Var ones = tape.constant(Tensor::full(hv.dims(), Complex(1.0, 1.0)));
  // split-complex convex mix: h' = (1-z) .* h + z .* c on re/im independently
  Var keep = split_mix(ones, z, h, c);
  return keep;
}

// h' = (1-z) .* h + z .* c computed with split-complex semantics. Because z
// comes from a split sigmoid both parts lie in (0,1), and complex elementwise
// multiply would mix re/im; the mix is done per part via re/im projections.
Var split_mix(Var ones, Var z, Var h, Var c);

}  // namespace

ParamSet init_optimizer_params(const OptimizerConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0x6f7074));  // "opt"
  const int H = cfg.hidden;
  const int I = cfg.input_width();
  const int gs = cfg.effective_group_size();
  ParamSet ps;
  auto mat = [&](const std::string& name, int in, int out) {
    ps.items.push_back({name, glorot_complex({in, out}, rng), false});
  };
  auto vec = [&](const std::string& name, int n) {
    ps.items.push_back({name, Tensor({n}), false});
  };
  mat("opt.in_proj.w", I, H);
  vec("opt.in_proj.b", H);
  for (const char* layer : {"opt.gru1", "opt.gru2"}) {
    const std::string l = layer;
    mat(l + ".wz", H, H);
    mat(l + ".uz", H, H);
    vec(l + ".bz", H);
    mat(l + ".wr", H, H);
    mat(l + ".ur", H, H);
    vec(l + ".br", H);
    mat(l + ".wc", H, H);
    mat(l + ".uc", H, H);
    vec(l + ".bc", H);
  }
  mat("opt.out_proj.w", H, gs);
  vec("opt.out_proj.b", gs);
  ps.items.push_back({"opt.block_gains", Tensor::full({1, cfg.blocks}, Complex(0.1, 0.0)), false});
  return ps;
}

OptimizerState make_optimizer_state(const OptimizerConfig& cfg) {
  OptimizerState st;
  st.h1 = Tensor({cfg.num_groups(), cfg.hidden});
  st.h2 = Tensor({cfg.num_groups(), cfg.hidden});
  return st;
}

namespace {

// Core shared by the tape and value paths.
OptimizerStepVars step_core(const OptimizerConfig& cfg, ad::Tape& tape,
                            const ad::TapeParams& params, Var h1, Var h2, Var filt_grad,
                            Var e_spec, Var y_spec, const aec::StepData& data,
                            const StreamContext& ctx) {
  using namespace ad;
  const GroupPlan& plan = plan_for(cfg);
  const int K = cfg.fft_size;
  const int gs = cfg.effective_group_size();
  const int G = static_cast<int>(plan.starts.size());

  Tensor u_cur({K});
  for (int k = 0; k < K; ++k) u_cur[k] = data.u_stack.at(k, 0);

  Var grad_avg = mul_scalar(row_sum(filt_grad), Complex(1.0 / cfg.blocks, 0.0));
  Var feats = concat({compress(grad_avg), compress(tape.constant(u_cur)),
                      compress(tape.constant(data.d_spec)), compress(e_spec),
                      compress(y_spec)});
  if (!tape.value(feats).all_finite())
    throw NumericError("optimizer_step: non-finite features for stream '" + ctx.stream_id +
                       "' at frame " + std::to_string(ctx.frame));

  Var x = add_row_vec(matmul(reshape(gather(feats, plan.gather_idx), {G, 5 * gs}),
                             params.at("opt.in_proj.w")),
                      params.at("opt.in_proj.b"));

  auto gru = [&](const std::string& prefix, Var xin, Var h) {
    auto gate = [&](const char* w, const char* u, const char* b, Var hh) {
      return add_row_vec(
          add(matmul(xin, params.at(prefix + w)), matmul(hh, params.at(prefix + u))),
          params.at(prefix + b));
    };
    Var z = sigmoid_split(gate(".wz", ".uz", ".bz", h));
    Var r = sigmoid_split(gate(".wr", ".ur", ".br", h));
    Var c = tanh_split(add_row_vec(add(matmul(xin, params.at(prefix + ".wc")),
                                       matmul(mul(r, h), params.at(prefix + ".uc"))),
                                   params.at(prefix + ".bc")));
    // split mix h' = h + z .* (c - h), exact per re/im part because z, h and
    // c are combined with the split elementwise product.
    return split_madd(h, z, c);
  };

  OptimizerStepVars out;
  out.h1 = gru("opt.gru1", x, h1);
  out.h2 = gru("opt.gru2", out.h1, h2);

  Var o = add_row_vec(matmul(out.h2, params.at("opt.out_proj.w")), params.at("opt.out_proj.b"));
  Var upd = mul(scatter_add(reshape(o, {G * gs}), plan.scatter_idx, K),
                tape.constant(plan.inv_counts));
  out.delta = matmul(reshape(upd, {K, 1}), params.at("opt.block_gains"));
  return out;
}

}  // namespace

OptimizerStepVars optimizer_step_on_tape(const OptimizerConfig& cfg, ad::Tape& tape,
                                         const ad::TapeParams& params, Var h1, Var h2,
                                         const aec::StepVars& step, const aec::StepData& data,
                                         const StreamContext& ctx) {
  return step_core(cfg, tape, params, h1, h2, step.grad, step.e_spec, step.y_spec, data, ctx);
}

OptimizerStepOutput optimizer_step(const OptimizerConfig& cfg, const ParamSet& params,
                                   const OptimizerState& state, const aec::StepOutput& step,
                                   const aec::StepData& data, const StreamContext& ctx) {
  ad::Tape tape;
  ad::TapeParams tp = ad::lift_params(tape, params, false);
  Var h1 = tape.constant(state.h1);
  Var h2 = tape.constant(state.h2);
  OptimizerStepVars vars =
      step_core(cfg, tape, tp, h1, h2, tape.constant(step.grad), tape.constant(step.e_spec),
                tape.constant(step.y_spec), data, ctx);
  OptimizerStepOutput out;
  out.delta = tape.value(vars.delta);
  out.state.h1 = tape.value(vars.h1);
  out.state.h2 = tape.value(vars.h2);
  return out;
}

Tensor compress_features(const Tensor& t) {
  ad::Tape tape;
  return tape.value(ad::compress(tape.constant(t)));
}

}  // namespace metaaec::opt
