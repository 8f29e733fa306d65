#include "metaaec/autodiff.hpp"

#include <cassert>
#include <cmath>

#include "metaaec/dsp.hpp"

namespace metaaec::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kNeg: return "neg";
    case Op::kMul: return "mul";
    case Op::kMulSplit: return "mul_split";
    case Op::kMulScalar: return "mul_scalar";
    case Op::kAddScalar: return "add_scalar";
    case Op::kConj: return "conj";
    case Op::kReal: return "real";
    case Op::kImag: return "imag";
    case Op::kAbsSq: return "abs_sq";
    case Op::kMatMul: return "matmul";
    case Op::kMulColBcast: return "mul_col_bcast";
    case Op::kFft: return "fft";
    case Op::kIfft: return "ifft";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kSliceCols: return "slice_cols";
    case Op::kSum: return "sum";
    case Op::kRowSum: return "row_sum";
    case Op::kMeanCols: return "mean_cols";
    case Op::kAddRowVec: return "add_row_vec";
    case Op::kTranspose: return "transpose";
    case Op::kSigmoidSplit: return "sigmoid_split";
    case Op::kTanhSplit: return "tanh_split";
    case Op::kReluSplit: return "relu_split";
    case Op::kLogReal: return "log_real";
    case Op::kSoftmaxReal: return "softmax_real";
    case Op::kCompress: return "compress";
    case Op::kGather: return "gather";
    case Op::kScatterAdd: return "scatter_add";
    case Op::kConv1d: return "conv1d";
    case Op::kLayerNormCh: return "layer_norm_channels";
    case Op::kReshape: return "reshape";
    case Op::kCustom: return "custom";
  }
  return "?";
}

const Tensor& Grad::at(Var v) const {
  if (adj_[v.node].size() == 0)
    throw UsageError("Grad::at: no adjoint recorded for node " + std::to_string(v.node));
  return adj_[v.node];
}

Var record(Tape& t, Node n) {
  for (int in : n.inputs)
    if (t.nodes_[in].needs_grad) n.needs_grad = true;
  t.nodes_.push_back(std::move(n));
  return Var{&t, static_cast<int>(t.nodes_.size()) - 1};
}

Var Tape::leaf(Tensor value, bool needs_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  nodes_.push_back(std::move(n));
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

namespace {

const Tensor& val(Var v) { return v.tape->value(v); }

void check_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw UsageError("autodiff: vars from different tapes");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// FFT/IFFT along the last axis of a rank-1 or rank-2 tensor.
Tensor fft_lastdim(const Tensor& a, bool inverse) {
  const int n = a.dim(a.rank() - 1);
  const int rows = a.size() / n;
  Tensor out(a.dims());
  std::vector<Complex> buf(n);
  for (int r = 0; r < rows; ++r) {
    const Complex* src = a.data() + static_cast<size_t>(r) * n;
    std::copy(src, src + n, buf.begin());
    dsp::fft_inplace(buf, inverse);
    std::copy(buf.begin(), buf.end(), out.data() + static_cast<size_t>(r) * n);
  }
  return out;
}

// Smooth magnitude-compression scale ln(1+r)/r and its derivative, with a
// series branch near zero.
void compress_scale(double r, double* g, double* gprime) {
  if (r < 1e-4) {
    *g = 1.0 - r / 2.0 + r * r / 3.0;
    *gprime = -0.5 + 2.0 * r / 3.0 - 0.75 * r * r;
  } else {
    const double l = std::log1p(r);
    *g = l / r;
    *gprime = (r / (1.0 + r) - l) / (r * r);
  }
}

struct LnStats {
  double mean, inv_std;
};

LnStats ln_column_stats(const Tensor& x, int t, double eps) {
  const int C = x.dim(0);
  double mu = 0.0;
  for (int c = 0; c < C; ++c) mu += x.at(c, t).real();
  mu /= C;
  double var = 0.0;
  for (int c = 0; c < C; ++c) {
    const double d = x.at(c, t).real() - mu;
    var += d * d;
  }
  var /= C;
  return {mu, 1.0 / std::sqrt(var + eps)};
}

}  // namespace

// --- builders ---------------------------------------------------------------

Var add(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw UsageError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = Op::kAdd;
  n.inputs = {a.node, b.node};
  n.value = A;
  for (int i = 0; i < B.size(); ++i) n.value[i] += B[i];
  return record(*a.tape, std::move(n));
}

Var sub(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw UsageError("sub: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = Op::kSub;
  n.inputs = {a.node, b.node};
  n.value = A;
  for (int i = 0; i < B.size(); ++i) n.value[i] -= B[i];
  return record(*a.tape, std::move(n));
}

Var neg(Var a) {
  Node n;
  n.op = Op::kNeg;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = -n.value[i];
  return record(*a.tape, std::move(n));
}

Var mul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B)) throw UsageError("mul: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = Op::kMul;
  n.inputs = {a.node, b.node};
  n.value = A;
  for (int i = 0; i < B.size(); ++i) n.value[i] *= B[i];
  return record(*a.tape, std::move(n));
}

Var mul_split(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (!A.same_shape(B))
    throw UsageError("mul_split: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
  Node n;
  n.op = Op::kMulSplit;
  n.inputs = {a.node, b.node};
  n.value = A;
  for (int i = 0; i < B.size(); ++i)
    n.value[i] = Complex(A[i].real() * B[i].real(), A[i].imag() * B[i].imag());
  return record(*a.tape, std::move(n));
}

Var mul_scalar(Var a, Complex c) {
  Node n;
  n.op = Op::kMulScalar;
  n.inputs = {a.node};
  n.cval = c;
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] *= c;
  return record(*a.tape, std::move(n));
}

Var add_scalar(Var a, Complex c) {
  Node n;
  n.op = Op::kAddScalar;
  n.inputs = {a.node};
  n.cval = c;
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] += c;
  return record(*a.tape, std::move(n));
}

Var conj(Var a) {
  Node n;
  n.op = Op::kConj;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = std::conj(n.value[i]);
  return record(*a.tape, std::move(n));
}

Var real(Var a) {
  Node n;
  n.op = Op::kReal;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = Complex(n.value[i].real(), 0.0);
  return record(*a.tape, std::move(n));
}

Var imag(Var a) {
  Node n;
  n.op = Op::kImag;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = Complex(n.value[i].imag(), 0.0);
  return record(*a.tape, std::move(n));
}

Var abs_sq(Var a) {
  Node n;
  n.op = Op::kAbsSq;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = Complex(std::norm(n.value[i]), 0.0);
  return record(*a.tape, std::move(n));
}

Var matmul(Var a, Var b) {
  check_same_tape(a, b);
  const Tensor& A = val(a);
  const Tensor& B = val(b);
  if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
    throw UsageError("matmul: incompatible shapes " + A.shape_str() + " x " + B.shape_str());
  const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
  Node n;
  n.op = Op::kMatMul;
  n.inputs = {a.node, b.node};
  n.value = Tensor({m, p});
  for (int i = 0; i < m; ++i) {
    Complex* out = n.value.data() + static_cast<size_t>(i) * p;
    for (int l = 0; l < k; ++l) {
      const Complex av = A.at(i, l);
      const Complex* brow = B.data() + static_cast<size_t>(l) * p;
      for (int j = 0; j < p; ++j) out[j] += av * brow[j];
    }
  }
  return record(*a.tape, std::move(n));
}

Var mul_col_bcast(Var vec, Var mat) {
  check_same_tape(vec, mat);
  const Tensor& V = val(vec);
  const Tensor& M = val(mat);
  if (V.rank() != 1 || M.rank() != 2 || V.dim(0) != M.dim(0))
    throw UsageError("mul_col_bcast: incompatible shapes " + V.shape_str() + " vs " + M.shape_str());
  Node n;
  n.op = Op::kMulColBcast;
  n.inputs = {vec.node, mat.node};
  n.value = M;
  const int rows = M.dim(0), cols = M.dim(1);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) n.value.at(i, j) *= V[i];
  return record(*vec.tape, std::move(n));
}

Var fft(Var a) {
  Node n;
  n.op = Op::kFft;
  n.inputs = {a.node};
  n.value = fft_lastdim(val(a), false);
  return record(*a.tape, std::move(n));
}

Var ifft(Var a) {
  Node n;
  n.op = Op::kIfft;
  n.inputs = {a.node};
  n.value = fft_lastdim(val(a), true);
  return record(*a.tape, std::move(n));
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw UsageError("concat: no inputs");
  Node n;
  n.op = Op::kConcat;
  int total = 0;
  for (Var p : parts) {
    check_same_tape(parts[0], p);
    n.inputs.push_back(p.node);
    total += val(p).size();
  }
  n.value = Tensor({total});
  int off = 0;
  for (Var p : parts) {
    const Tensor& t = val(p);
    std::copy(t.data(), t.data() + t.size(), n.value.data() + off);
    off += t.size();
  }
  return record(*parts[0].tape, std::move(n));
}

Var slice(Var a, int start, int len) {
  const Tensor& A = val(a);
  if (start < 0 || len < 0 || start + len > A.size())
    throw UsageError("slice: range out of bounds");
  Node n;
  n.op = Op::kSlice;
  n.inputs = {a.node};
  n.i0 = start;
  n.i1 = len;
  n.value = Tensor({len});
  std::copy(A.data() + start, A.data() + start + len, n.value.data());
  return record(*a.tape, std::move(n));
}

Var slice_cols(Var a, int start, int len) {
  const Tensor& A = val(a);
  if (A.rank() != 2 || start < 0 || start + len > A.dim(1))
    throw UsageError("slice_cols: bad range");
  Node n;
  n.op = Op::kSliceCols;
  n.inputs = {a.node};
  n.i0 = start;
  n.i1 = len;
  n.value = Tensor({A.dim(0), len});
  for (int i = 0; i < A.dim(0); ++i)
    for (int j = 0; j < len; ++j) n.value.at(i, j) = A.at(i, start + j);
  return record(*a.tape, std::move(n));
}

Var sum(Var a) {
  const Tensor& A = val(a);
  Complex s(0.0, 0.0);
  for (int i = 0; i < A.size(); ++i) s += A[i];
  Node n;
  n.op = Op::kSum;
  n.inputs = {a.node};
  n.value = Tensor::scalar(s);
  return record(*a.tape, std::move(n));
}

Var row_sum(Var a) {
  const Tensor& A = val(a);
  if (A.rank() != 2) throw UsageError("row_sum: expected rank-2 tensor");
  Node n;
  n.op = Op::kRowSum;
  n.inputs = {a.node};
  n.value = Tensor({A.dim(0)});
  for (int i = 0; i < A.dim(0); ++i) {
    Complex s(0.0, 0.0);
    for (int j = 0; j < A.dim(1); ++j) s += A.at(i, j);
    n.value[i] = s;
  }
  return record(*a.tape, std::move(n));
}

Var mean_cols(Var a) {
  const Tensor& A = val(a);
  if (A.rank() != 2) throw UsageError("mean_cols: expected rank-2 tensor");
  Node n;
  n.op = Op::kMeanCols;
  n.inputs = {a.node};
  n.value = Tensor({A.dim(0)});
  for (int i = 0; i < A.dim(0); ++i) {
    Complex s(0.0, 0.0);
    for (int j = 0; j < A.dim(1); ++j) s += A.at(i, j);
    n.value[i] = s / static_cast<double>(A.dim(1));
  }
  return record(*a.tape, std::move(n));
}

Var add_row_vec(Var m, Var v) {
  check_same_tape(m, v);
  const Tensor& M = val(m);
  const Tensor& V = val(v);
  if (M.rank() != 2 || V.rank() != 1 || V.dim(0) != M.dim(1))
    throw UsageError("add_row_vec: incompatible shapes");
  Node n;
  n.op = Op::kAddRowVec;
  n.inputs = {m.node, v.node};
  n.value = M;
  for (int i = 0; i < M.dim(0); ++i)
    for (int j = 0; j < M.dim(1); ++j) n.value.at(i, j) += V[j];
  return record(*m.tape, std::move(n));
}

Var transpose(Var a) {
  const Tensor& A = val(a);
  if (A.rank() != 2) throw UsageError("transpose: expected rank-2 tensor");
  Node n;
  n.op = Op::kTranspose;
  n.inputs = {a.node};
  n.value = Tensor({A.dim(1), A.dim(0)});
  for (int i = 0; i < A.dim(0); ++i)
    for (int j = 0; j < A.dim(1); ++j) n.value.at(j, i) = A.at(i, j);
  return record(*a.tape, std::move(n));
}

Var sigmoid_split(Var a) {
  Node n;
  n.op = Op::kSigmoidSplit;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i)
    n.value[i] = Complex(sigmoid(n.value[i].real()), sigmoid(n.value[i].imag()));
  return record(*a.tape, std::move(n));
}

Var tanh_split(Var a) {
  Node n;
  n.op = Op::kTanhSplit;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i)
    n.value[i] = Complex(std::tanh(n.value[i].real()), std::tanh(n.value[i].imag()));
  return record(*a.tape, std::move(n));
}

Var relu_split(Var a) {
  Node n;
  n.op = Op::kReluSplit;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i)
    n.value[i] = Complex(std::max(0.0, n.value[i].real()), std::max(0.0, n.value[i].imag()));
  return record(*a.tape, std::move(n));
}

Var log_real(Var a) {
  Node n;
  n.op = Op::kLogReal;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) n.value[i] = Complex(std::log(n.value[i].real()), 0.0);
  return record(*a.tape, std::move(n));
}

Var softmax_real(Var a) {
  const Tensor& A = val(a);
  Node n;
  n.op = Op::kSoftmaxReal;
  n.inputs = {a.node};
  n.value = A;
  double mx = -1e300;
  for (int i = 0; i < A.size(); ++i) mx = std::max(mx, A[i].real());
  double denom = 0.0;
  for (int i = 0; i < A.size(); ++i) denom += std::exp(A[i].real() - mx);
  for (int i = 0; i < A.size(); ++i)
    n.value[i] = Complex(std::exp(A[i].real() - mx) / denom, 0.0);
  return record(*a.tape, std::move(n));
}

Var compress(Var a) {
  Node n;
  n.op = Op::kCompress;
  n.inputs = {a.node};
  n.value = val(a);
  for (int i = 0; i < n.value.size(); ++i) {
    const Complex z = n.value[i];
    const double r = std::abs(z);
    if (r < 1e-30) {
      n.value[i] = Complex(0.0, 0.0);
    } else {
      double g, gp;
      compress_scale(r, &g, &gp);
      n.value[i] = z * g;
    }
  }
  return record(*a.tape, std::move(n));
}

Var gather(Var a, std::shared_ptr<const std::vector<int>> idx) {
  const Tensor& A = val(a);
  Node n;
  n.op = Op::kGather;
  n.inputs = {a.node};
  n.idx = std::move(idx);
  n.value = Tensor({static_cast<int>(n.idx->size())});
  for (size_t i = 0; i < n.idx->size(); ++i) {
    const int j = (*n.idx)[i];
    if (j < 0 || j >= A.size()) throw UsageError("gather: index out of range");
    n.value[static_cast<int>(i)] = A[j];
  }
  return record(*a.tape, std::move(n));
}

Var scatter_add(Var a, std::shared_ptr<const std::vector<int>> idx, int out_size) {
  const Tensor& A = val(a);
  if (static_cast<size_t>(A.size()) != idx->size())
    throw UsageError("scatter_add: index size mismatch");
  Node n;
  n.op = Op::kScatterAdd;
  n.inputs = {a.node};
  n.idx = std::move(idx);
  n.i0 = out_size;
  n.value = Tensor({out_size});
  for (int i = 0; i < A.size(); ++i) {
    const int j = (*n.idx)[i];
    if (j < 0 || j >= out_size) throw UsageError("scatter_add: index out of range");
    n.value[j] += A[i];
  }
  return record(*a.tape, std::move(n));
}

Var conv1d(Var x, Var w, Var b, int dilation) {
  check_same_tape(x, w);
  check_same_tape(x, b);
  const Tensor& X = val(x);
  const Tensor& W = val(w);
  const Tensor& B = val(b);
  if (X.rank() != 2 || W.rank() != 3 || B.rank() != 1)
    throw UsageError("conv1d: expected x(Cin,T) w(Cout,Cin,k) b(Cout)");
  const int cin = X.dim(0), T = X.dim(1);
  const int cout = W.dim(0), k = W.dim(2);
  if (W.dim(1) != cin || B.dim(0) != cout || k % 2 == 0)
    throw UsageError("conv1d: shape mismatch or even kernel");
  const int ctr = k / 2;
  Node n;
  n.op = Op::kConv1d;
  n.inputs = {x.node, w.node, b.node};
  n.i0 = dilation;
  n.value = Tensor({cout, T});
  for (int o = 0; o < cout; ++o) {
    for (int t = 0; t < T; ++t) n.value.at(o, t) = B[o];
    for (int c = 0; c < cin; ++c) {
      for (int j = 0; j < k; ++j) {
        const Complex wv = W.at(o, c, j);
        const int off = (j - ctr) * dilation;
        const int t0 = std::max(0, -off);
        const int t1 = std::min(T, T - off);
        const Complex* xr = X.data() + static_cast<size_t>(c) * T;
        Complex* yr = n.value.data() + static_cast<size_t>(o) * T;
        for (int t = t0; t < t1; ++t) yr[t] += wv * xr[t + off];
      }
    }
  }
  return record(*x.tape, std::move(n));
}

Var layer_norm_channels(Var x, Var gamma, Var beta, double eps) {
  check_same_tape(x, gamma);
  check_same_tape(x, beta);
  const Tensor& X = val(x);
  const Tensor& G = val(gamma);
  const Tensor& Bt = val(beta);
  if (X.rank() != 2 || G.rank() != 1 || Bt.rank() != 1 || G.dim(0) != X.dim(0) ||
      Bt.dim(0) != X.dim(0))
    throw UsageError("layer_norm_channels: shape mismatch");
  const int C = X.dim(0), T = X.dim(1);
  Node n;
  n.op = Op::kLayerNormCh;
  n.inputs = {x.node, gamma.node, beta.node};
  n.cval = Complex(eps, 0.0);
  n.value = Tensor({C, T});
  for (int t = 0; t < T; ++t) {
    const LnStats st = ln_column_stats(X, t, eps);
    for (int c = 0; c < C; ++c) {
      const double xhat = (X.at(c, t).real() - st.mean) * st.inv_std;
      n.value.at(c, t) = Complex(G[c].real() * xhat + Bt[c].real(), 0.0);
    }
  }
  return record(*x.tape, std::move(n));
}

Var reshape(Var a, std::vector<int> dims) {
  Node n;
  n.op = Op::kReshape;
  n.inputs = {a.node};
  n.value = val(a).reshaped(std::move(dims));
  return record(*a.tape, std::move(n));
}

Var custom_unary(Var a, std::shared_ptr<const CustomRule> rule) {
  Node n;
  n.op = Op::kCustom;
  n.inputs = {a.node};
  n.custom = std::move(rule);
  n.value = n.custom->forward(val(a));
  return record(*a.tape, std::move(n));
}

// --- backward ----------------------------------------------------------------

Grad Tape::backward(Var loss) {
  if (loss.tape != this) throw UsageError("backward: loss from a different tape");
  const Node& ln = nodes_[loss.node];
  if (ln.value.size() != 1) throw UsageError("backward: loss must be a scalar");
  if (std::abs(ln.value[0].imag()) > 1e-9)
    throw UsageError("backward: loss must be real, got imaginary part " +
                     std::to_string(ln.value[0].imag()));
  for (int i = 0; i <= loss.node; ++i) {
    if (!nodes_[i].value.all_finite())
      throw NumericError("backward: non-finite forward value at node #" + std::to_string(i) +
                         " (" + op_name(nodes_[i].op) + ")");
  }

  Grad grad(static_cast<int>(nodes_.size()));
  std::vector<Tensor>& adj = grad.raw();
  adj[loss.node] = Tensor::scalar(Complex(1.0, 0.0));

  auto ensure = [&](int i) -> Tensor& {
    if (adj[i].size() == 0) adj[i] = Tensor(nodes_[i].value.dims());
    return adj[i];
  };
  std::vector<bool> touched(nodes_.size(), false);
  touched[loss.node] = true;
  auto want = [&](int i) { return nodes_[i].needs_grad; };

  for (int ni = loss.node; ni >= 0; --ni) {
    if (!touched[ni] || !nodes_[ni].needs_grad) continue;
    const Node& nd = nodes_[ni];
    const Tensor& g = adj[ni];
    auto acc_into = [&](int in) -> Tensor* {
      if (!want(in)) return nullptr;
      touched[in] = true;
      return &ensure(in);
    };
    switch (nd.op) {
      case Op::kLeaf:
        break;
      case Op::kAdd: {
        for (int s = 0; s < 2; ++s)
          if (Tensor* a = acc_into(nd.inputs[s]))
            for (int i = 0; i < g.size(); ++i) (*a)[i] += g[i];
        break;
      }
      case Op::kSub: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += g[i];
        if (Tensor* a = acc_into(nd.inputs[1]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] -= g[i];
        break;
      }
      case Op::kNeg: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] -= g[i];
        break;
      }
      case Op::kMul: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        const Tensor& B = nodes_[nd.inputs[1]].value;
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += std::conj(B[i]) * g[i];
        if (Tensor* a = acc_into(nd.inputs[1]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += std::conj(A[i]) * g[i];
        break;
      }
      case Op::kMulSplit: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        const Tensor& B = nodes_[nd.inputs[1]].value;
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i)
            (*a)[i] += Complex(g[i].real() * B[i].real(), g[i].imag() * B[i].imag());
        if (Tensor* a = acc_into(nd.inputs[1]))
          for (int i = 0; i < g.size(); ++i)
            (*a)[i] += Complex(g[i].real() * A[i].real(), g[i].imag() * A[i].imag());
        break;
      }
      case Op::kMulScalar: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          const Complex c = std::conj(nd.cval);
          for (int i = 0; i < g.size(); ++i) (*a)[i] += c * g[i];
        }
        break;
      }
      case Op::kAddScalar: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += g[i];
        break;
      }
      case Op::kConj: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += std::conj(g[i]);
        break;
      }
      case Op::kReal: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += Complex(g[i].real(), 0.0);
        break;
      }
      case Op::kImag: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += Complex(0.0, g[i].real());
        break;
      }
      case Op::kAbsSq: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += 2.0 * g[i].real() * A[i];
        break;
      }
      case Op::kMatMul: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        const Tensor& B = nodes_[nd.inputs[1]].value;
        const int m = A.dim(0), k = A.dim(1), p = B.dim(1);
        if (Tensor* a = acc_into(nd.inputs[0])) {
          // aA += g * B^H
          for (int i = 0; i < m; ++i)
            for (int l = 0; l < k; ++l) {
              Complex s(0.0, 0.0);
              for (int j = 0; j < p; ++j) s += g.at(i, j) * std::conj(B.at(l, j));
              a->at(i, l) += s;
            }
        }
        if (Tensor* a = acc_into(nd.inputs[1])) {
          // aB += A^H * g
          for (int l = 0; l < k; ++l)
            for (int j = 0; j < p; ++j) {
              Complex s(0.0, 0.0);
              for (int i = 0; i < m; ++i) s += std::conj(A.at(i, l)) * g.at(i, j);
              a->at(l, j) += s;
            }
        }
        break;
      }
      case Op::kMulColBcast: {
        const Tensor& V = nodes_[nd.inputs[0]].value;
        const Tensor& M = nodes_[nd.inputs[1]].value;
        const int rows = M.dim(0), cols = M.dim(1);
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < rows; ++i) {
            Complex s(0.0, 0.0);
            for (int j = 0; j < cols; ++j) s += std::conj(M.at(i, j)) * g.at(i, j);
            (*a)[i] += s;
          }
        }
        if (Tensor* a = acc_into(nd.inputs[1])) {
          for (int i = 0; i < rows; ++i) {
            const Complex vc = std::conj(V[i]);
            for (int j = 0; j < cols; ++j) a->at(i, j) += vc * g.at(i, j);
          }
        }
        break;
      }
      case Op::kFft: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          const int n = g.dim(g.rank() - 1);
          Tensor t = fft_lastdim(g, true);
          for (int i = 0; i < t.size(); ++i) (*a)[i] += static_cast<double>(n) * t[i];
        }
        break;
      }
      case Op::kIfft: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          const int n = g.dim(g.rank() - 1);
          Tensor t = fft_lastdim(g, false);
          const double s = 1.0 / n;
          for (int i = 0; i < t.size(); ++i) (*a)[i] += s * t[i];
        }
        break;
      }
      case Op::kConcat: {
        int off = 0;
        for (int in : nd.inputs) {
          const int sz = nodes_[in].value.size();
          if (Tensor* a = acc_into(in))
            for (int i = 0; i < sz; ++i) (*a)[i] += g[off + i];
          off += sz;
        }
        break;
      }
      case Op::kSlice: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < nd.i1; ++i) (*a)[nd.i0 + i] += g[i];
        break;
      }
      case Op::kSliceCols: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          const int rows = a->dim(0);
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < nd.i1; ++j) a->at(i, nd.i0 + j) += g.at(i, j);
        }
        break;
      }
      case Op::kSum: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < a->size(); ++i) (*a)[i] += g[0];
        break;
      }
      case Op::kRowSum: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < a->dim(0); ++i)
            for (int j = 0; j < a->dim(1); ++j) a->at(i, j) += g[i];
        }
        break;
      }
      case Op::kMeanCols: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          const double s = 1.0 / a->dim(1);
          for (int i = 0; i < a->dim(0); ++i)
            for (int j = 0; j < a->dim(1); ++j) a->at(i, j) += s * g[i];
        }
        break;
      }
      case Op::kAddRowVec: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += g[i];
        if (Tensor* a = acc_into(nd.inputs[1])) {
          const int rows = g.dim(0), cols = g.dim(1);
          for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) (*a)[j] += g.at(i, j);
        }
        break;
      }
      case Op::kTranspose: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < g.dim(0); ++i)
            for (int j = 0; j < g.dim(1); ++j) a->at(j, i) += g.at(i, j);
        }
        break;
      }
      case Op::kSigmoidSplit: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < g.size(); ++i) {
            const Complex s = nd.value[i];  // sigmoid values
            (*a)[i] += Complex(g[i].real() * s.real() * (1.0 - s.real()),
                               g[i].imag() * s.imag() * (1.0 - s.imag()));
          }
        }
        break;
      }
      case Op::kTanhSplit: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < g.size(); ++i) {
            const Complex s = nd.value[i];
            (*a)[i] += Complex(g[i].real() * (1.0 - s.real() * s.real()),
                               g[i].imag() * (1.0 - s.imag() * s.imag()));
          }
        }
        break;
      }
      case Op::kReluSplit: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < g.size(); ++i)
            (*a)[i] += Complex(A[i].real() > 0.0 ? g[i].real() : 0.0,
                               A[i].imag() > 0.0 ? g[i].imag() : 0.0);
        }
        break;
      }
      case Op::kLogReal: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i)
            (*a)[i] += Complex(g[i].real() / A[i].real(), 0.0);
        break;
      }
      case Op::kSoftmaxReal: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          double dot = 0.0;
          for (int i = 0; i < g.size(); ++i) dot += g[i].real() * nd.value[i].real();
          for (int i = 0; i < g.size(); ++i)
            (*a)[i] += Complex(nd.value[i].real() * (g[i].real() - dot), 0.0);
        }
        break;
      }
      case Op::kCompress: {
        const Tensor& A = nodes_[nd.inputs[0]].value;
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int i = 0; i < g.size(); ++i) {
            const Complex z = A[i];
            const double r = std::abs(z);
            if (r < 1e-30) {
              (*a)[i] += g[i];  // Jacobian tends to identity at the origin
            } else {
              double gr, gp;
              compress_scale(r, &gr, &gp);
              const double p = g[i].real() * z.real() + g[i].imag() * z.imag();
              (*a)[i] += gr * g[i] + (gp / r) * p * z;
            }
          }
        }
        break;
      }
      case Op::kGather: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (size_t i = 0; i < nd.idx->size(); ++i)
            (*a)[(*nd.idx)[i]] += g[static_cast<int>(i)];
        break;
      }
      case Op::kScatterAdd: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < a->size(); ++i) (*a)[i] += g[(*nd.idx)[i]];
        break;
      }
      case Op::kConv1d: {
        const Tensor& X = nodes_[nd.inputs[0]].value;
        const Tensor& W = nodes_[nd.inputs[1]].value;
        const int cin = X.dim(0), T = X.dim(1);
        const int cout = W.dim(0), k = W.dim(2);
        const int ctr = k / 2;
        const int d = nd.i0;
        if (Tensor* a = acc_into(nd.inputs[0])) {
          for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c)
              for (int j = 0; j < k; ++j) {
                const Complex wv = std::conj(W.at(o, c, j));
                const int off = (j - ctr) * d;
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                const Complex* gr = g.data() + static_cast<size_t>(o) * T;
                Complex* ar = a->data() + static_cast<size_t>(c) * T;
                for (int t = t0; t < t1; ++t) ar[t + off] += wv * gr[t];
              }
        }
        if (Tensor* a = acc_into(nd.inputs[1])) {
          for (int o = 0; o < cout; ++o)
            for (int c = 0; c < cin; ++c)
              for (int j = 0; j < k; ++j) {
                const int off = (j - ctr) * d;
                const int t0 = std::max(0, -off);
                const int t1 = std::min(T, T - off);
                const Complex* gr = g.data() + static_cast<size_t>(o) * T;
                const Complex* xr = X.data() + static_cast<size_t>(c) * T;
                Complex s(0.0, 0.0);
                for (int t = t0; t < t1; ++t) s += std::conj(xr[t + off]) * gr[t];
                a->at(o, c, j) += s;
              }
        }
        if (Tensor* a = acc_into(nd.inputs[2])) {
          for (int o = 0; o < cout; ++o) {
            Complex s(0.0, 0.0);
            for (int t = 0; t < T; ++t) s += g.at(o, t);
            (*a)[o] += s;
          }
        }
        break;
      }
      case Op::kLayerNormCh: {
        const Tensor& X = nodes_[nd.inputs[0]].value;
        const Tensor& G = nodes_[nd.inputs[1]].value;
        const int C = X.dim(0), T = X.dim(1);
        const double eps = nd.cval.real();
        Tensor* ax = acc_into(nd.inputs[0]);
        Tensor* ag = acc_into(nd.inputs[1]);
        Tensor* ab = acc_into(nd.inputs[2]);
        std::vector<double> xhat(C), dxh(C);
        for (int t = 0; t < T; ++t) {
          const LnStats st = ln_column_stats(X, t, eps);
          double m_dxh = 0.0, m_dxh_xhat = 0.0;
          for (int c = 0; c < C; ++c) {
            xhat[c] = (X.at(c, t).real() - st.mean) * st.inv_std;
            dxh[c] = g.at(c, t).real() * G[c].real();
            m_dxh += dxh[c];
            m_dxh_xhat += dxh[c] * xhat[c];
          }
          m_dxh /= C;
          m_dxh_xhat /= C;
          if (ax)
            for (int c = 0; c < C; ++c)
              ax->at(c, t) += Complex(st.inv_std * (dxh[c] - m_dxh - xhat[c] * m_dxh_xhat), 0.0);
          if (ag)
            for (int c = 0; c < C; ++c)
              (*ag)[c] += Complex(g.at(c, t).real() * xhat[c], 0.0);
          if (ab)
            for (int c = 0; c < C; ++c) (*ab)[c] += Complex(g.at(c, t).real(), 0.0);
        }
        break;
      }
      case Op::kReshape: {
        if (Tensor* a = acc_into(nd.inputs[0]))
          for (int i = 0; i < g.size(); ++i) (*a)[i] += g[i];
        break;
      }
      case Op::kCustom: {
        if (Tensor* a = acc_into(nd.inputs[0])) {
          Tensor t = nd.custom->backward(nodes_[nd.inputs[0]].value, nd.value, g);
          for (int i = 0; i < t.size(); ++i) (*a)[i] += t[i];
        }
        break;
      }
    }
  }
  return grad;
}

// --- parameter lifting ----------------------------------------------------------

Var TapeParams::at(const std::string& name) const {
  for (size_t i = 0; i < source->items.size(); ++i)
    if (source->items[i].name == name) return vars[i];
  throw UsageError("TapeParams::at: no parameter named '" + name + "'");
}

TapeParams lift_params(Tape& tape, const ParamSet& params, bool needs_grad) {
  TapeParams tp;
  tp.source = &params;
  tp.vars.reserve(params.items.size());
  for (const auto& p : params.items) tp.vars.push_back(tape.leaf(p.value, needs_grad));
  return tp;
}

void accumulate_param_grads(const TapeParams& tp, const Grad& grad, std::vector<Tensor>& acc) {
  if (acc.size() != tp.vars.size()) {
    acc.resize(tp.vars.size());
    for (size_t i = 0; i < acc.size(); ++i) acc[i] = Tensor(tp.source->items[i].value.dims());
  }
  for (size_t i = 0; i < tp.vars.size(); ++i) {
    if (!grad.has(tp.vars[i])) continue;
    const Tensor& g = grad.at(tp.vars[i]);
    for (int j = 0; j < g.size(); ++j) acc[i][j] += g[j];
  }
}

// --- gradient checking --------------------------------------------------------

GradCheckReport check_gradients(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                                const std::vector<Param>& params, double eps, double tol) {
  if (eps <= 0.0) throw UsageError("check_gradients: eps must be positive");
  GradCheckReport report;

  // Analytic pass.
  std::vector<Tensor> analytic(params.size());
  {
    Tape tape;
    std::vector<Var> leaves;
    leaves.reserve(params.size());
    for (const auto& p : params) leaves.push_back(tape.leaf(p.value, true));
    Var loss = f(tape, leaves);
    Grad grad = tape.backward(loss);
    for (size_t i = 0; i < params.size(); ++i)
      analytic[i] = grad.has(leaves[i]) ? grad.at(leaves[i]) : Tensor(params[i].value.dims());
  }

  auto eval = [&](const std::vector<Param>& ps) {
    Tape tape;
    std::vector<Var> leaves;
    for (const auto& p : ps) leaves.push_back(tape.leaf(p.value, false));
    Var loss = f(tape, leaves);
    return tape.value(loss)[0].real();
  };

  std::vector<Param> work = params;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    GradCheckEntry entry;
    entry.name = params[pi].name;
    const int n = params[pi].value.size();
    for (int ci = 0; ci < n; ++ci) {
      for (int part = 0; part < 2; ++part) {
        if (part == 1 && params[pi].is_real) continue;
        const Complex orig = work[pi].value[ci];
        const Complex delta = part == 0 ? Complex(eps, 0.0) : Complex(0.0, eps);
        work[pi].value[ci] = orig + delta;
        const double lp = eval(work);
        work[pi].value[ci] = orig - delta;
        const double lm = eval(work);
        work[pi].value[ci] = orig;
        const double fd = (lp - lm) / (2.0 * eps);
        const double an = part == 0 ? analytic[pi][ci].real() : analytic[pi][ci].imag();
        const double err =
            std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-2});
        entry.max_rel_err = std::max(entry.max_rel_err, err);
      }
    }
    entry.pass = entry.max_rel_err < tol;
    report.entries.push_back(entry);
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.all_pass = report.all_pass && entry.pass;
  }
  return report;
}

}  // namespace metaaec::ad
