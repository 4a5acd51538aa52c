#pragma once

#include <map>

#include "luvit/ops.hpp"

namespace luvit {

struct AttentionOptions {
  Index heads = 1;
  bool causal = false;
  bool rope = false;
};

/// Captures post-softmax attention ([B x H x T x T]) and block outputs ([B x T x d]) by layer index.
/// Encoder blocks use indices 0..depth-1; the fusion block records at index depth.
template <typename S>
struct ForwardRecording {
  std::map<int, Tensor<S>> attention;
  std::map<int, Tensor<S>> features;
};

/// Multi-head scaled dot-product attention over [B x T x d] inputs, 1/sqrt(d_head) scaling.
/// When `probs` is non-null it receives the [B x H x T x T] attention probabilities.
template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, const AttentionOptions& opts,
                               Tensor<S>* probs = nullptr);

}  // namespace luvit
