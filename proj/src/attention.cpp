#include "luvit/attention.hpp"

#include <cmath>
#include <limits>

namespace luvit {
namespace {

template <typename S>
Tensor<S> split_heads(const Tensor<S>& x, Index heads) {
  const Index b = x.dim(0), t = x.dim(1), d = x.dim(2);
  const Tensor<S> split = permute(reshape(x, {b, t, heads, d / heads}), {0, 2, 1, 3});
  return reshape(split, {b * heads, t, d / heads});
}

template <typename S>
Tensor<S> merge_heads(const Tensor<S>& x, Index batch, Index heads) {
  const Index t = x.dim(1), dh = x.dim(2);
  const Tensor<S> merged = permute(reshape(x, {batch, heads, t, dh}), {0, 2, 1, 3});
  return reshape(merged, {batch, t, heads * dh});
}

}  // namespace

template <typename S>
Tensor<S> multi_head_attention(const Tensor<S>& q, const Tensor<S>& k, const Tensor<S>& v, const AttentionOptions& opts,
                               Tensor<S>* probs) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v must share a [B x T x d] shape, got " + to_string(q.shape()) + ", " +
                     to_string(k.shape()) + ", " + to_string(v.shape()));
  }
  const Index batch = q.dim(0), tokens = q.dim(1), d = q.dim(2);
  if (opts.heads <= 0 || d % opts.heads != 0) throw ShapeError("attention: width not divisible by head count");
  const Index dh = d / opts.heads;

  Tensor<S> qh = split_heads(q, opts.heads);
  Tensor<S> kh = split_heads(k, opts.heads);
  const Tensor<S> vh = split_heads(v, opts.heads);
  if (opts.rope) {
    qh = rope(qh);
    kh = rope(kh);
  }
  Tensor<S> scores = scale(bmm(qh, kh, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
  if (opts.causal) {
    Buffer<S> mask = Buffer<S>::Zero(tokens * tokens);
    for (Index i = 0; i < tokens; ++i) {
      for (Index j = i + 1; j < tokens; ++j) mask[i * tokens + j] = -std::numeric_limits<S>::infinity();
    }
    scores = add_broadcast(scores, Tensor<S>({tokens, tokens}, std::move(mask)));
  }
  const Tensor<S> p = softmax_rows(scores);
  if (probs != nullptr) *probs = reshape(p, {batch, opts.heads, tokens, tokens});
  return merge_heads(bmm(p, vh), batch, opts.heads);
}

template Tensor<float> multi_head_attention(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                            const AttentionOptions&, Tensor<float>*);
template Tensor<double> multi_head_attention(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                             const AttentionOptions&, Tensor<double>*);

}  // namespace luvit
