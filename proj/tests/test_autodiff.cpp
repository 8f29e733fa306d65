#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "metaaec/autodiff.hpp"

using namespace metaaec;
using namespace metaaec::ad;

namespace {

Tensor random_tensor(std::vector<int> dims, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(dims));
  for (int i = 0; i < t.size(); ++i) t[i] = Complex(scale * rng.normal(), scale * rng.normal());
  return t;
}

Tensor random_real_tensor(std::vector<int> dims, Rng& rng, double lo, double hi) {
  Tensor t(std::move(dims));
  for (int i = 0; i < t.size(); ++i) t[i] = Complex(rng.uniform(lo, hi), 0.0);
  return t;
}

// Generic scalarizer: engages both the magnitude and a fixed linear mix of
// the output so every output component affects the loss asymmetrically.
Var lossify(Var v) {
  Tape& t = *v.tape;
  const Tensor& tv = t.value(v);
  Tensor mix(tv.dims());
  for (int i = 0; i < mix.size(); ++i)
    mix[i] = Complex(0.3 + 0.1 * (i % 7), -0.2 + 0.05 * (i % 5));
  Var mixed = mul(v, t.constant(mix));
  return add(sum(abs_sq(v)), real(sum(mixed)));
}

void expect_gradcheck(const std::function<Var(Tape&, const std::vector<Var>&)>& f,
                      const std::vector<Param>& params) {
  auto report = check_gradients(f, params, 1e-5, 1e-4);
  for (const auto& entry : report.entries) {
    INFO("param ", entry.name, " max_rel_err=", entry.max_rel_err);
    CHECK(entry.pass);
  }
  CHECK(report.all_pass);
}

}  // namespace

TEST_CASE("per-primitive finite difference checks") {
  Rng rng(1234);

  SUBCASE("add sub neg mul") {
    std::vector<Param> ps = {{"a", random_tensor({5}, rng), false},
                             {"b", random_tensor({5}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return lossify(mul(sub(add(v[0], v[1]), neg(v[1])), v[0]));
        },
        ps);
  }

  SUBCASE("scalar ops conj real imag") {
    std::vector<Param> ps = {{"a", random_tensor({6}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          Var w = add_scalar(mul_scalar(v[0], Complex(0.7, -0.4)), Complex(0.1, 0.2));
          return add(lossify(conj(w)), add(sum(abs_sq(real(w))), sum(abs_sq(imag(w)))));
        },
        ps);
  }

  SUBCASE("abs_sq") {
    std::vector<Param> ps = {{"a", random_tensor({5}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return lossify(abs_sq(v[0])); }, ps);
  }

  SUBCASE("matmul") {
    std::vector<Param> ps = {{"a", random_tensor({3, 4}, rng), false},
                             {"b", random_tensor({4, 2}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return lossify(matmul(v[0], v[1])); }, ps);
  }

  SUBCASE("mul_col_bcast") {
    std::vector<Param> ps = {{"v", random_tensor({4}, rng), false},
                             {"m", random_tensor({4, 3}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return lossify(mul_col_bcast(v[0], v[1])); }, ps);
  }

  SUBCASE("fft ifft") {
    std::vector<Param> ps = {{"a", random_tensor({8}, rng), false},
                             {"m", random_tensor({2, 8}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return add(lossify(fft(v[0])), add(lossify(ifft(v[0])), lossify(fft(v[1]))));
        },
        ps);
  }

  SUBCASE("concat slice") {
    std::vector<Param> ps = {{"a", random_tensor({3}, rng), false},
                             {"b", random_tensor({4}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          Var c = concat({v[0], v[1], v[0]});
          return lossify(slice(c, 2, 6));
        },
        ps);
  }

  SUBCASE("slice_cols transpose") {
    std::vector<Param> ps = {{"m", random_tensor({3, 6}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return lossify(transpose(slice_cols(v[0], 2, 3)));
        },
        ps);
  }

  SUBCASE("reductions and broadcasts") {
    std::vector<Param> ps = {{"m", random_tensor({4, 3}, rng), false},
                             {"v", random_tensor({3}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          Var m = add_row_vec(v[0], v[1]);
          return add(lossify(row_sum(m)), lossify(mean_cols(m)));
        },
        ps);
  }

  SUBCASE("split activations") {
    // Keep inputs away from the relu kink at zero.
    Tensor t({6});
    for (int i = 0; i < 6; ++i) {
      double re = rng.normal();
      double im = rng.normal();
      if (std::abs(re) < 0.1) re = re < 0 ? re - 0.1 : re + 0.1;
      if (std::abs(im) < 0.1) im = im < 0 ? im - 0.1 : im + 0.1;
      t[i] = Complex(re, im);
    }
    std::vector<Param> ps = {{"a", t, false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return add(lossify(sigmoid_split(v[0])),
                     add(lossify(tanh_split(v[0])), lossify(relu_split(v[0]))));
        },
        ps);
  }

  SUBCASE("log_real") {
    std::vector<Param> ps = {{"a", random_real_tensor({5}, rng, 0.5, 2.0), true}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return sum(abs_sq(log_real(v[0]))); }, ps);
  }

  SUBCASE("softmax_real") {
    std::vector<Param> ps = {{"a", random_real_tensor({5}, rng, -1.0, 1.0), true}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return lossify(softmax_real(v[0])); }, ps);
  }

  SUBCASE("compress") {
    Tensor t({6});
    t[0] = Complex(1.3, -0.4);
    t[1] = Complex(-0.8, 0.9);
    t[2] = Complex(0.001, 0.002);  // small-magnitude branch
    t[3] = Complex(2.5, 1.5);
    t[4] = Complex(-0.05, -0.001);
    t[5] = Complex(0.4, -2.2);
    std::vector<Param> ps = {{"a", t, false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) { return lossify(compress(v[0])); }, ps);
  }

  SUBCASE("gather scatter_add") {
    auto idx = std::make_shared<const std::vector<int>>(std::vector<int>{0, 2, 2, 4, 1});
    std::vector<Param> ps = {{"a", random_tensor({5}, rng), false}};
    expect_gradcheck(
        [idx](Tape&, const std::vector<Var>& v) {
          Var g = gather(v[0], idx);
          Var s = scatter_add(g, idx, 5);
          return lossify(s);
        },
        ps);
  }

  SUBCASE("conv1d") {
    for (int dilation : {1, 2}) {
      std::vector<Param> ps = {{"x", random_tensor({2, 7}, rng), false},
                               {"w", random_tensor({3, 2, 5}, rng, 0.5), false},
                               {"b", random_tensor({3}, rng), false}};
      expect_gradcheck(
          [dilation](Tape&, const std::vector<Var>& v) {
            return lossify(conv1d(v[0], v[1], v[2], dilation));
          },
          ps);
    }
  }

  SUBCASE("layer_norm_channels") {
    std::vector<Param> ps = {{"x", random_real_tensor({4, 3}, rng, -1.5, 1.5), true},
                             {"g", random_real_tensor({4}, rng, 0.5, 1.5), true},
                             {"b", random_real_tensor({4}, rng, -0.5, 0.5), true}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return lossify(layer_norm_channels(v[0], v[1], v[2]));
        },
        ps);
  }

  SUBCASE("reshape") {
    std::vector<Param> ps = {{"a", random_tensor({6}, rng), false}};
    expect_gradcheck(
        [](Tape&, const std::vector<Var>& v) {
          return lossify(matmul(reshape(v[0], {2, 3}), reshape(v[0], {3, 2})));
        },
        ps);
  }
}

TEST_CASE("analytic adjoint of sum of squared real parts") {
  Tape tape;
  Tensor t({3});
  t[0] = Complex(1.5, -2.0);
  t[1] = Complex(-0.5, 0.75);
  t[2] = Complex(3.0, 1.0);
  Var z = tape.leaf(t, true);
  Var loss = sum(abs_sq(real(z)));
  Grad g = tape.backward(loss);
  const Tensor& a = g.at(z);
  for (int i = 0; i < 3; ++i) {
    CHECK(a[i].real() == doctest::Approx(2.0 * t[i].real()).epsilon(1e-12));
    CHECK(a[i].imag() == 0.0);
  }
}

TEST_CASE("loss independent of a leaf gives no adjoint") {
  Tape tape;
  Rng rng(5);
  Var used = tape.leaf(random_tensor({4}, rng), true);
  Var unused = tape.leaf(random_tensor({4}, rng), true);
  Var loss = sum(abs_sq(used));
  Grad g = tape.backward(loss);
  CHECK(g.has(used));
  CHECK_FALSE(g.has(unused));
}

TEST_CASE("composite |a*b - c|^2 matches finite differences") {
  Rng rng(77);
  std::vector<Param> ps = {{"a", random_tensor({4}, rng), false},
                           {"b", random_tensor({4}, rng), false},
                           {"c", random_tensor({4}, rng), false}};
  expect_gradcheck(
      [](Tape&, const std::vector<Var>& v) {
        return sum(abs_sq(sub(mul(v[0], v[1]), v[2])));
      },
      ps);
}

TEST_CASE("gradient is linear over summed losses") {
  Rng rng(99);
  Tensor t = random_tensor({5}, rng);

  auto grad_of = [&](int which) {
    Tape tape;
    Var z = tape.leaf(t, true);
    Var f = sum(abs_sq(mul(z, z)));
    Var g2 = real(sum(mul(z, tape.constant(random_tensor({5}, rng)))));
    (void)g2;
    Tape tape2;
    (void)tape2;
    Var loss = which == 0 ? f : which == 1 ? sum(abs_sq(add(z, z))) : add(f, sum(abs_sq(add(z, z))));
    Grad g = tape.backward(loss);
    return g.at(z);
  };

  Tensor ga = grad_of(0), gb = grad_of(1), gsum = grad_of(2);
  for (int i = 0; i < 5; ++i)
    CHECK(std::abs(gsum[i] - (ga[i] + gb[i])) < 1e-12 * (1.0 + std::abs(gsum[i])));
}

TEST_CASE("looped unroll equals hand-unrolled graph") {
  Rng rng(2024);
  Tensor w = random_tensor({4, 4}, rng, 0.4);
  Tensor h0 = random_tensor({4, 1}, rng);
  Tensor x0 = random_tensor({4, 1}, rng);
  Tensor x1 = random_tensor({4, 1}, rng);
  Tensor x2 = random_tensor({4, 1}, rng);

  auto run_loop = [&]() {
    Tape tape;
    Var wv = tape.leaf(w, true);
    Var h = tape.constant(h0);
    const Tensor* xs[3] = {&x0, &x1, &x2};
    for (int t = 0; t < 3; ++t)
      h = tanh_split(add(matmul(wv, h), tape.constant(*xs[t])));
    Grad g = tape.backward(sum(abs_sq(h)));
    return g.at(wv);
  };

  auto run_manual = [&]() {
    Tape tape;
    Var wv = tape.leaf(w, true);
    Var h1 = tanh_split(add(matmul(wv, tape.constant(h0)), tape.constant(x0)));
    Var h2 = tanh_split(add(matmul(wv, h1), tape.constant(x1)));
    Var h3 = tanh_split(add(matmul(wv, h2), tape.constant(x2)));
    Grad g = tape.backward(sum(abs_sq(h3)));
    return g.at(wv);
  };

  Tensor a = run_loop(), b = run_manual();
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);  // bit identical
}

TEST_CASE("corrupted adjoint rule is reported as failing") {
  auto bad_rule = std::make_shared<CustomRule>();
  bad_rule->name = "bad_scale";
  bad_rule->forward = [](const Tensor& x) {
    Tensor v = x;
    for (int i = 0; i < v.size(); ++i) v[i] *= 2.0;
    return v;
  };
  // Deliberately wrong: claims the derivative is 3 instead of 2.
  bad_rule->backward = [](const Tensor&, const Tensor&, const Tensor& g) {
    Tensor v = g;
    for (int i = 0; i < v.size(); ++i) v[i] *= 3.0;
    return v;
  };

  Rng rng(8);
  std::vector<Param> ps = {{"a", random_tensor({4}, rng), false}};
  auto report = check_gradients(
      [bad_rule](Tape&, const std::vector<Var>& v) {
        return sum(abs_sq(custom_unary(v[0], bad_rule)));
      },
      ps, 1e-5, 1e-4);
  CHECK_FALSE(report.all_pass);

  // A correct custom rule passes the same harness.
  auto good_rule = std::make_shared<CustomRule>(*bad_rule);
  good_rule->backward = [](const Tensor&, const Tensor&, const Tensor& g) {
    Tensor v = g;
    for (int i = 0; i < v.size(); ++i) v[i] *= 2.0;
    return v;
  };
  auto report2 = check_gradients(
      [good_rule](Tape&, const std::vector<Var>& v) {
        return sum(abs_sq(custom_unary(v[0], good_rule)));
      },
      ps, 1e-5, 1e-4);
  CHECK(report2.all_pass);
}

TEST_CASE("linear function gradcheck error is near machine precision") {
  Rng rng(31);
  std::vector<Param> ps = {{"a", random_tensor({5}, rng), false}};
  auto report = check_gradients(
      [](Tape&, const std::vector<Var>& v) {
        Tensor c({5});
        for (int i = 0; i < 5; ++i) c[i] = Complex(0.5 + 0.25 * i, -0.3 * i);
        return real(sum(mul(v[0], v[0].tape->constant(c))));
      },
      ps, 1e-5, 1e-4);
  CHECK(report.all_pass);
  CHECK(report.worst < 1e-6);
}

TEST_CASE("backward rejects non-scalar and names non-finite nodes") {
  Tape tape;
  Rng rng(64);
  Var z = tape.leaf(random_tensor({4}, rng), true);
  Var v = add(z, z);
  CHECK_THROWS_AS((void)tape.backward(v), UsageError);

  Tensor bad({2});
  bad[0] = Complex(1.0, 0.0);
  bad[1] = Complex(std::numeric_limits<double>::quiet_NaN(), 0.0);
  Tape tape2;
  Var nan_leaf = tape2.leaf(bad, true);
  Var loss = sum(abs_sq(nan_leaf));
  try {
    (void)tape2.backward(loss);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("node #0") != std::string::npos);
  }
}
