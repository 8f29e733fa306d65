#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "metaaec/tensor.hpp"

namespace metaaec::ad {

// Reverse-mode tape over complex tensors.
//
// Adjoint convention: for a node with value z = x + iy and real scalar loss
// L, the stored adjoint is dL/dx + i*dL/dy. A gradient-descent step on the
// (re, im) parts of a complex parameter reads the adjoint directly. For
// holomorphic ops this equals conj(d out/d in) * adjoint_out.

class Tape;

struct Var {
  Tape* tape = nullptr;
  int node = -1;
  bool valid() const { return tape != nullptr && node >= 0; }
};

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kNeg,
  kMul,          // elementwise, same shape
  kMulSplit,     // elementwise on re and im independently
  kMulScalar,    // times complex constant
  kAddScalar,
  kConj,
  kReal,
  kImag,
  kAbsSq,        // |z|^2, real output
  kMatMul,       // (m x k)(k x n)
  kMulColBcast,  // vec(m) * mat(m x n) columnwise
  kFft,          // along last axis
  kIfft,
  kConcat,       // flat 1-d concat
  kSlice,        // flat slice
  kSliceCols,    // matrix column slice
  kSum,          // -> scalar
  kRowSum,       // (m x n) -> m
  kMeanCols,     // (m x n) -> m
  kAddRowVec,    // (m x n) + v(n)
  kTranspose,
  kSigmoidSplit,
  kTanhSplit,
  kReluSplit,
  kLogReal,
  kSoftmaxReal,  // over a vector / single column
  kCompress,     // ln(1+|z|) e^{i angle z}
  kGather,       // out[i] = in_flat[idx[i]]
  kScatterAdd,   // out[idx[i]] += in[i]
  kConv1d,       // x(Cin x T), w(Cout x Cin x k), b(Cout)
  kLayerNormCh,  // x(C x T), gamma(C), beta(C); acts on real parts
  kReshape,
  kCustom,
};

const char* op_name(Op op);

// Extension point for test doubles and one-off ops.
struct CustomRule {
  std::function<Tensor(const Tensor&)> forward;
  // adjoint(input_value, output_value, output_adjoint) -> input adjoint
  std::function<Tensor(const Tensor&, const Tensor&, const Tensor&)> backward;
  std::string name = "custom";
};

struct Node {
  Op op = Op::kLeaf;
  Tensor value;
  std::vector<int> inputs;
  bool needs_grad = false;
  // op payloads
  Complex cval{0.0, 0.0};
  int i0 = 0, i1 = 0, i2 = 0;
  std::shared_ptr<const std::vector<int>> idx;
  std::shared_ptr<const CustomRule> custom;
};

// Per-leaf adjoints keyed by node id.
class Grad {
 public:
  explicit Grad(int n) : adj_(n) {}
  bool has(Var v) const { return !adj_[v.node].empty(); }
  const Tensor& at(Var v) const;
  std::vector<Tensor>& raw() { return adj_; }
  const std::vector<Tensor>& raw() const { return adj_; }

 private:
  std::vector<Tensor> adj_;
};

class Tape {
 public:
  Var leaf(Tensor value, bool needs_grad);
  Var constant(Tensor value) { return leaf(std::move(value), false); }
  Var constant_scalar(Complex v) { return constant(Tensor::scalar(v)); }

  const Tensor& value(Var v) const { return nodes_[v.node].value; }
  int num_nodes() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int i) const { return nodes_[i]; }

  // Reverse pass from a real scalar loss node. Throws UsageError for a
  // non-scalar loss and NumericError naming the first node whose forward
  // value is non-finite.
  Grad backward(Var loss);

  void reserve(size_t n) { nodes_.reserve(n); }

  friend Var record(Tape& t, Node n);

 private:
  std::vector<Node> nodes_;
};

// --- op builders -----------------------------------------------------------

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);
// Split-complex product: out = (re a * re b) + i (im a * im b). Used for
// gating in split-complex recurrent cells.
Var mul_split(Var a, Var b);
Var mul_scalar(Var a, Complex c);
Var add_scalar(Var a, Complex c);
Var conj(Var a);
Var real(Var a);
Var imag(Var a);
Var abs_sq(Var a);
Var matmul(Var a, Var b);
// out[i, j] = vec[i] * mat[i, j]
Var mul_col_bcast(Var vec, Var mat);
Var fft(Var a);
Var ifft(Var a);
Var concat(const std::vector<Var>& parts);
Var slice(Var a, int start, int len);
Var slice_cols(Var a, int start, int len);
Var sum(Var a);
Var row_sum(Var a);
Var mean_cols(Var a);
Var add_row_vec(Var m, Var v);
Var transpose(Var a);
Var sigmoid_split(Var a);
Var tanh_split(Var a);
Var relu_split(Var a);
Var log_real(Var a);
Var softmax_real(Var a);
Var compress(Var a);
Var gather(Var a, std::shared_ptr<const std::vector<int>> idx);
Var scatter_add(Var a, std::shared_ptr<const std::vector<int>> idx, int out_size);
Var conv1d(Var x, Var w, Var b, int dilation);
Var layer_norm_channels(Var x, Var gamma, Var beta, double eps = 1e-5);
Var reshape(Var a, std::vector<int> dims);
Var custom_unary(Var a, std::shared_ptr<const CustomRule> rule);

// --- parameter lifting --------------------------------------------------------

// Tape handles for a ParamSet, aligned with its item order.
struct TapeParams {
  const ParamSet* source = nullptr;
  std::vector<Var> vars;

  Var at(const std::string& name) const;
};

TapeParams lift_params(Tape& tape, const ParamSet& params, bool needs_grad);

// Adds each lifted parameter's adjoint into acc (same order/shapes as the
// ParamSet); missing adjoints contribute nothing.
void accumulate_param_grads(const TapeParams& tp, const Grad& grad, std::vector<Tensor>& acc);

// --- gradient checking ------------------------------------------------------

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool all_pass = true;
  double worst = 0.0;
};

// Central finite-difference check of the analytic gradient of
// f(tape, leaves) -> scalar loss Var. Each parameter's re and im components
// are perturbed by +/- eps. The per-component error is
// |a - f| / max(|a|, |f|, 0.01); a parameter passes when its max error is
// below tol.
GradCheckReport check_gradients(
    const std::function<Var(Tape&, const std::vector<Var>&)>& f,
    const std::vector<Param>& params, double eps = 1e-5, double tol = 1e-4);

}  // namespace metaaec::ad
