#pragma once

#include <cassert>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "metaaec/common.hpp"

namespace metaaec {

// Dense row-major complex tensor. Rank 0 (scalar) through 3 is used.
// Real-valued quantities are stored with zero imaginary parts; parameter
// containers tag which entries are semantically real.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    data_.assign(count(dims_), Complex(0.0, 0.0));
  }

  static Tensor scalar(Complex v) {
    Tensor t(std::vector<int>{});
    t.data_[0] = v;
    return t;
  }

  static Tensor zeros(std::vector<int> dims) { return Tensor(std::move(dims)); }

  static Tensor full(std::vector<int> dims, Complex v) {
    Tensor t(std::move(dims));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor from_vector(const std::vector<Complex>& v) {
    Tensor t({static_cast<int>(v.size())});
    t.data_ = v;
    return t;
  }

  static Tensor from_real(const std::vector<double>& v) {
    Tensor t({static_cast<int>(v.size())});
    for (size_t i = 0; i < v.size(); ++i) t.data_[i] = Complex(v[i], 0.0);
    return t;
  }

  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[i]; }
  const std::vector<int>& dims() const { return dims_; }
  int size() const { return static_cast<int>(data_.size()); }
  bool empty() const { return data_.empty(); }

  Complex* data() { return data_.data(); }
  const Complex* data() const { return data_.data(); }

  Complex& operator[](int i) { return data_[i]; }
  const Complex& operator[](int i) const { return data_[i]; }

  Complex& at(int i, int j) { return data_[static_cast<size_t>(i) * dims_[1] + j]; }
  const Complex& at(int i, int j) const { return data_[static_cast<size_t>(i) * dims_[1] + j]; }

  Complex& at(int i, int j, int k) {
    return data_[(static_cast<size_t>(i) * dims_[1] + j) * dims_[2] + k];
  }
  const Complex& at(int i, int j, int k) const {
    return data_[(static_cast<size_t>(i) * dims_[1] + j) * dims_[2] + k];
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  Tensor reshaped(std::vector<int> dims) const {
    assert(count(dims) == data_.size());
    Tensor t = *this;
    t.dims_ = std::move(dims);
    return t;
  }

  bool all_finite() const {
    for (const auto& z : data_) {
      if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    }
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < dims_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(dims_[i]);
    }
    return s + ")";
  }

 private:
  static size_t count(const std::vector<int>& dims) {
    size_t n = 1;
    for (int d : dims) n *= static_cast<size_t>(d);
    return n;
  }

  std::vector<int> dims_;
  std::vector<Complex> data_;  // default-constructed tensor is empty; rank-0 via Tensor({}) is a scalar
};

// Named parameter with a real/complex tag. Real parameters keep zero
// imaginary parts; training discards imaginary adjoints for them.
struct Param {
  std::string name;
  Tensor value;
  bool is_real = false;
};

struct ParamSet {
  std::vector<Param> items;

  Param* find(const std::string& name) {
    for (auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }
  const Param* find(const std::string& name) const {
    for (const auto& p : items)
      if (p.name == name) return &p;
    return nullptr;
  }

  // Number of complex-valued entries (complex-tagged params only).
  int64_t complex_count() const {
    int64_t n = 0;
    for (const auto& p : items)
      if (!p.is_real) n += p.value.size();
    return n;
  }

  // Number of real-valued entries (real-tagged params only).
  int64_t real_count() const {
    int64_t n = 0;
    for (const auto& p : items)
      if (p.is_real) n += p.value.size();
    return n;
  }
};

}  // namespace metaaec
