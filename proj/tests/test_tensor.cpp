#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "luvit/ops.hpp"

using namespace luvit;
using test::grad_check;
using test::randn;

TEST_CASE("tensor basics") {
  const Tensor<float> t = Tensor<float>::zeros({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.dim(1) == 3);
  CHECK_FALSE(t.has_grad());
  CHECK_THROWS_AS(Tensor<float>({2, 2}, Buffer<float>::Zero(3)), ShapeError);

  Tensor<float> a = Tensor<float>::filled({2}, 1.5f, true);
  const Tensor<float> c = a.clone();
  CHECK_FALSE(c.requires_grad());
  a.mutable_value()[0] = 3.0f;
  CHECK(c[0] == 1.5f);
}

TEST_CASE("softmax_rows") {
  const Tensor<double> s = softmax_rows(Tensor<double>::zeros({1, 3}));
  for (Index i = 0; i < 3; ++i) CHECK(s[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const Tensor<float> big = softmax_rows(Tensor<float>::from_vector({1, 2}, {1000.0f, 0.0f}));
  CHECK(std::isfinite(big[0]));
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] == doctest::Approx(0.0));

  const Tensor<float> x = randn<float>({4, 5}, 3);
  const Tensor<float> y = softmax_rows(x);
  for (Index r = 0; r < 4; ++r) {
    double z = 0.0;
    for (Index c = 0; c < 5; ++c) z += std::exp(static_cast<double>(x[r * 5 + c]));
    for (Index c = 0; c < 5; ++c) CHECK(std::abs(y[r * 5 + c] - std::exp(static_cast<double>(x[r * 5 + c])) / z) < 1e-6);
  }

  const Tensor<float> extreme = softmax_rows(Tensor<float>::from_vector({2, 3}, {1e4f, -1e4f, 0.0f, -1e4f, -1e4f, -1e4f}));
  for (Index r = 0; r < 2; ++r) {
    double sum = 0.0;
    for (Index c = 0; c < 3; ++c) {
      CHECK(extreme[r * 3 + c] >= 0.0f);
      sum += extreme[r * 3 + c];
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("rms_norm") {
  const Tensor<double> ones = Tensor<double>::filled({4}, 1.0);
  const Tensor<double> z = rms_norm(Tensor<double>::zeros({2, 4}), ones);
  for (Index i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

  const Tensor<double> c = rms_norm(Tensor<double>::filled({1, 4}, 2.5), ones, 1e-12);
  for (Index i = 0; i < 4; ++i) CHECK(c[i] == doctest::Approx(1.0).epsilon(1e-9));

  const Tensor<float> x = randn<float>({3, 6}, 11);
  const Tensor<float> g = randn<float>({6}, 12);
  const Tensor<float> y = rms_norm(x, g);
  for (Index r = 0; r < 3; ++r) {
    double ms = 0.0;
    for (Index j = 0; j < 6; ++j) ms += static_cast<double>(x[r * 6 + j]) * x[r * 6 + j];
    const double inv = 1.0 / std::sqrt(ms / 6.0 + 1e-6);
    for (Index j = 0; j < 6; ++j) CHECK(std::abs(y[r * 6 + j] - g[j] * x[r * 6 + j] * inv) < 1e-6);
  }
  CHECK_THROWS_AS(rms_norm(x, Tensor<float>::zeros({5})), ShapeError);
}

TEST_CASE("layout and elementwise primitives") {
  const Tensor<double> x = randn({4, 3}, 5);
  const Tensor<double> g = gather_rows(x, {0, 1, 2, 3});
  CHECK(test::bit_equal(g.value(), x.value()));

  const Tensor<double> rt = transpose(transpose(x));
  CHECK(test::bit_equal(rt.value(), x.value()));
  CHECK(rt.shape() == x.shape());
  const Tensor<double> rs = reshape(reshape(x, {2, 6}), {4, 3});
  CHECK(test::bit_equal(rs.value(), x.value()));
  const Tensor<double> p = permute(permute(randn({2, 3, 4}, 6), {2, 0, 1}), {1, 2, 0});
  CHECK(test::bit_equal(p.value(), randn({2, 3, 4}, 6).value()));
  CHECK_THROWS_AS(reshape(x, {5, 2}), ShapeError);
  CHECK_THROWS_AS(matmul(x, x), ShapeError);

  const Tensor<double> m = matmul(x, transpose(x));
  CHECK(m[1] == doctest::Approx(x[0] * x[3] + x[1] * x[4] + x[2] * x[5]));

  const Tensor<double> e = gelu(Tensor<double>::from_vector({3}, {-1.0, 0.0, 2.0}));
  CHECK(e[0] == doctest::Approx(-0.15865525393145707));
  CHECK(e[1] == 0.0);
  CHECK(e[2] == doctest::Approx(1.9544997361036416));
  const Tensor<double> s = silu(Tensor<double>::from_vector({1}, {1.0}));
  CHECK(s[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))));

  const Tensor<double> mc = mean(Tensor<double>::from_vector({2, 2}, {1, 2, 3, 4}), 0);
  CHECK(mc.shape() == Shape{2});
  CHECK(mc[0] == 2.0);
  CHECK(mc[1] == 3.0);
}

TEST_CASE("layer_norm normalises each row") {
  const Tensor<float> x = randn<float>({5, 16}, 9, 3.0);
  const Tensor<float> y = layer_norm(x, Tensor<float>::filled({16}, 1.0f), Tensor<float>::zeros({16}));
  for (Index r = 0; r < 5; ++r) {
    double mu = 0.0, var = 0.0;
    for (Index j = 0; j < 16; ++j) mu += y[r * 16 + j];
    mu /= 16.0;
    for (Index j = 0; j < 16; ++j) var += (y[r * 16 + j] - mu) * (y[r * 16 + j] - mu);
    CHECK(std::abs(mu) < 1e-5);
    CHECK(std::abs(var / 16.0 - 1.0) < 1e-5);
  }
}

TEST_CASE("label-smoothed cross-entropy") {
  const double s = 0.1;
  const int classes = 4;
  auto loss_at = [&](double margin) {
    return cross_entropy_with_label_smoothing(Tensor<double>::from_vector({1, 4}, {margin, 0, 0, 0}), {0}, s).item();
  };
  // Smoothed target q has entropy H(q), a floor for the loss.
  const double q_true = 1.0 - s + s / classes, q_other = s / classes;
  const double entropy = -(q_true * std::log(q_true) + (classes - 1) * q_other * std::log(q_other));
  const double m_star = std::log(q_true / q_other);
  double prev = loss_at(-5.0);
  for (double m = -4.9; m <= m_star - 0.05; m += 0.1) {
    const double cur = loss_at(m);
    CHECK(cur < prev);
    prev = cur;
  }
  CHECK(loss_at(m_star) == doctest::Approx(entropy).epsilon(1e-9));
  for (double m : {-3.0, 0.0, 2.0, 8.0, 50.0}) CHECK(loss_at(m) >= entropy - 1e-12);
  // Without smoothing the +inf limit is 0.
  CHECK(cross_entropy_with_label_smoothing(Tensor<double>::from_vector({1, 2}, {60.0, 0.0}), {0}, 0.0).item() < 1e-20);
  CHECK_THROWS_AS(cross_entropy_with_label_smoothing(Tensor<double>::zeros({2, 3}), {0}, s), ShapeError);
  CHECK_THROWS_AS(cross_entropy_with_label_smoothing(Tensor<double>::zeros({1, 3}), {3}, s), ContractError);
}

TEST_CASE("backward") {
  Tensor<double> x = randn({3, 2}, 1, 1.0, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    backward(tape, sum(x));
  }
  for (Index i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);

  x.clear_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    backward(tape, mean(mul(x, x)));
  }
  for (Index i = 0; i < 6; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0 * x[i] / 6.0));

  Tape<double> tape;
  TapeScope<double> scope(tape);
  CHECK_THROWS_AS(backward(tape, mul(x, x)), ContractError);
}

TEST_CASE("frozen tensors never receive a gradient") {
  Tensor<double> w = randn({3, 3}, 2, 1.0, true);
  const Tensor<double> frozen = randn({3, 3}, 3);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, sum(matmul(matmul(w, frozen), w)));
  }
  CHECK(w.has_grad());
  CHECK_FALSE(frozen.has_grad());
  CHECK_FALSE(frozen.requires_grad());
}

TEST_CASE("finite_diff_grad") {
  const auto fd = finite_diff_grad<double>([](const Tensor<double>& v) { return sum(v).item(); }, randn({4}, 1), 1e-3);
  for (Index i = 0; i < 4; ++i) CHECK(fd[i] == doctest::Approx(1.0).epsilon(1e-9));
  const auto sq = finite_diff_grad<double>([](const Tensor<double>& v) { return v[0] * v[0]; },
                                           Tensor<double>::from_vector({1}, {3.0}), 1e-3);
  CHECK(std::abs(sq[0] - 6.0) < 1e-6);
  CHECK_THROWS_AS(finite_diff_grad<double>([](const Tensor<double>&) { return 0.0; }, randn({1}, 1), 0.0), ContractError);
}

TEST_CASE("primitive gradients match finite differences on 20 seeds") {
  using T = Tensor<double>;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const T a = randn({3, 4}, 100 + seed), b = randn({4, 5}, 200 + seed), w = randn({5, 4}, 300 + seed);
    const T g = randn({4}, 400 + seed), bias = randn({5}, 500 + seed), r = randn({3, 4}, 600 + seed);
    const T b3 = randn({2, 3, 4}, 700 + seed), c3 = randn({2, 4, 3}, 800 + seed);
    auto weighted = [&](const T& y) { return sum(mul(y, randn(y.shape(), 900 + seed))); };

    CHECK(grad_check([&](const T& x) { return weighted(matmul(x, b)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(matmul(a, x)); }, b) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(bmm(x, c3)); }, b3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(bmm(b3, x, false, false)); }, c3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(bmm(x, b3, false, true)); }, b3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(bmm(x, b3, true, false)); }, b3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(linear(a, x, bias)); }, w) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(linear(a, w, x)); }, bias) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(add(x, r)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(sub(r, x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(mul(x, x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(scale(x, -2.5)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(add_broadcast(a, x)); }, g) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(gelu(x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(silu(x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(reshape(x, {2, 6})); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(permute(x, {1, 2, 0})); }, b3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(transpose(x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(gather_rows(x, {2, 0, 2, 1})); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(concat_rows(x, r)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return mean(mul(x, r)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(mean(x, 1)); }, b3) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(softmax_rows(x)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(layer_norm(x, g, g)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(layer_norm(a, x, g)); }, g) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(rms_norm(x, g)); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(rms_norm(a, x)); }, g) < 1e-4);
    CHECK(grad_check([&](const T& x) { return cross_entropy_with_label_smoothing(x, {1, 3, 0}, 0.1); }, a) < 1e-4);
    CHECK(grad_check([&](const T& x) { return weighted(rope(x)); }, b3) < 1e-4);
  }
}
