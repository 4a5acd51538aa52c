#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "luvit/config.hpp"
#include "luvit/finite_diff.hpp"
#include "luvit/rng.hpp"
#include "luvit/tensor.hpp"

namespace luvit::test {

template <typename S = double>
Tensor<S> randn(const Shape& shape, std::uint64_t seed, double stddev = 1.0, bool requires_grad = false) {
  Rng rng(seed);
  Buffer<S> b(numel(shape));
  fill_normal(b, stddev, rng);
  return Tensor<S>(shape, std::move(b), requires_grad);
}

inline double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

// Largest relative error between autodiff and central differences of loss_fn at x.
inline double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& loss_fn, const Tensor<double>& x,
                         double eps = 1e-5) {
  Tensor<double> leaf = x.clone();
  leaf.set_requires_grad(true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    backward(tape, loss_fn(leaf));
  }
  const Tensor<double> fd = finite_diff_grad<double>([&](const Tensor<double>& v) { return loss_fn(v).item(); }, x, eps);
  double worst = 0.0;
  for (Index i = 0; i < x.numel(); ++i) worst = std::max(worst, rel_err(leaf.grad()[i], fd.value()[i]));
  return worst;
}

// 8x8 images, p=4, d=16, one encoder block, d_llm=32, decoder depth 1.
inline ModelConfig micro_config(Variant v = Variant::luvit) {
  ModelConfig c = desk_config(v);
  c.vit.image_size = 8;
  c.vit.patch_size = 4;
  c.vit.depth = 1;
  c.vit.hidden_dim = 16;
  c.vit.heads = 2;
  c.llm.llm_dim = 32;
  c.llm.heads = 2;
  c.llm.mlp_hidden = 64;
  c.lora.rank = 4;
  c.lora.alpha = 4.0;
  c.decoder.depth = 1;
  c.decoder.dim = 16;
  c.decoder.heads = 2;
  c.num_classes = 3;
  return c;
}

inline bool bit_equal(const Buffer<float>& a, const Buffer<float>& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}
inline bool bit_equal(const Buffer<double>& a, const Buffer<double>& b) {
  return a.size() == b.size() && std::equal(a.data(), a.data() + a.size(), b.data());
}

}  // namespace luvit::test
