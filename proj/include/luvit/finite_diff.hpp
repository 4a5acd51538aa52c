#pragma once

#include <functional>
#include <vector>

#include "luvit/tensor.hpp"

namespace luvit {

/// Central-difference gradient of a scalar function, evaluated on perturbed copies of `x`.
template <typename S>
Tensor<S> finite_diff_grad(const std::function<double(const Tensor<S>&)>& f, const Tensor<S>& x, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  Buffer<S> grad(x.numel());
  Tensor<S> probe = x.clone();
  for (Index i = 0; i < x.numel(); ++i) {
    const S original = probe.value()[i];
    probe.mutable_value()[i] = static_cast<S>(original + eps);
    const double up = f(probe);
    probe.mutable_value()[i] = static_cast<S>(original - eps);
    const double down = f(probe);
    probe.mutable_value()[i] = original;
    grad[i] = static_cast<S>((up - down) / (2.0 * eps));
  }
  return Tensor<S>(x.shape(), std::move(grad));
}

/// Same estimate for selected entries of a tensor that `f` reads in place
/// (e.g. a model parameter). The entry is restored after each probe.
template <typename S>
std::vector<double> finite_diff_grad_inplace(const std::function<double()>& f, Tensor<S>& param,
                                             const std::vector<Index>& entries, double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_grad: eps must be positive");
  std::vector<double> out;
  out.reserve(entries.size());
  for (Index i : entries) {
    const S original = param.value()[i];
    param.mutable_value()[i] = static_cast<S>(original + eps);
    const double up = f();
    param.mutable_value()[i] = static_cast<S>(original - eps);
    const double down = f();
    param.mutable_value()[i] = original;
    out.push_back((up - down) / (2.0 * eps));
  }
  return out;
}

}  // namespace luvit
