#include "luvit/mae.hpp"

#include <cmath>
#include <iostream>
#include <numeric>

namespace luvit::mae {

Index visible_count(Index n_tokens, double ratio) {
  if (n_tokens < 1) throw ContractError("random_masking: need at least one token");
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ContractError("random_masking: ratio must lie in [0, 1)");
  const auto kept = static_cast<Index>(std::llround(static_cast<double>(n_tokens) * (1.0 - ratio)));
  if (kept < 1) {
    std::cerr << "warning: mask ratio " << ratio << " leaves no visible patch of " << n_tokens << "; keeping 1\n";
    return 1;
  }
  return kept;
}

MaskSpec random_masking(Index n_tokens, double ratio, Rng& rng) {
  MaskSpec m;
  m.n_visible = visible_count(n_tokens, ratio);
  m.perm.resize(static_cast<std::size_t>(n_tokens));
  std::iota(m.perm.begin(), m.perm.end(), Index{0});
  if (m.n_visible < n_tokens) shuffle_range(m.perm.begin(), m.perm.end(), rng);
  m.ids_restore.resize(m.perm.size());
  for (Index i = 0; i < n_tokens; ++i) m.ids_restore[m.perm[i]] = i;
  m.mask.assign(m.perm.size(), 0.0f);
  for (Index i = m.n_visible; i < n_tokens; ++i) m.mask[m.perm[i]] = 1.0f;
  return m;
}

template <typename S>
Tensor<S> shuffle_tokens(const Tensor<S>& x, const MaskSpec& m) {
  return gather_rows(x, m.perm);
}

template <typename S>
Tensor<S> restore_tokens(const Tensor<S>& shuffled, const MaskSpec& m) {
  return gather_rows(shuffled, m.ids_restore);
}

template <typename S>
Tensor<S> normalized_pixel_target(const Tensor<S>& patches, double eps) {
  const auto in = patches.matrix();
  Buffer<S> out(patches.numel());
  Eigen::Map<RowMatrix<S>> y(out.data(), in.rows(), in.cols());
  for (Index i = 0; i < in.rows(); ++i) {
    const Eigen::ArrayXd r = in.row(i).transpose().template cast<double>();
    const double mu = r.mean();
    const double var = (r - mu).square().mean();
    y.row(i) = ((r - mu) / std::sqrt(var + eps)).transpose().template cast<S>();
  }
  return Tensor<S>(patches.shape(), std::move(out));
}

template <typename S>
Tensor<S> mae_loss(const Tensor<S>& pred, const Tensor<S>& target, const std::vector<float>& mask) {
  if (pred.shape() != target.shape()) throw ShapeError("mae_loss: pred/target shape mismatch");
  const Index patches = pred.numel() / pred.shape().back();
  if (static_cast<Index>(mask.size()) != patches) throw ShapeError("mae_loss: one mask entry per patch required");
  double masked = 0.0;
  Buffer<S> weights(patches);
  for (Index i = 0; i < patches; ++i) {
    weights[i] = static_cast<S>(mask[i]);
    masked += mask[i];
  }
  if (masked < 1.0) throw ContractError("mae_loss: no masked patch to score");

  const Tensor<S> diff = sub(pred, target);
  Tensor<S> per_patch = mean(reshape(mul(diff, diff), {patches, pred.shape().back()}), 1);
  const Tensor<S> weighted = mul(per_patch, Tensor<S>({patches}, std::move(weights)));
  return scale(sum(weighted), 1.0 / masked);
}

template <typename S>
Tensor<S> sincos_pos_embed(Index grid, Index dim) {
  if (dim % 4 != 0) throw ShapeError("sincos_pos_embed: dim must be divisible by 4");
  const Index quarter = dim / 4;
  Buffer<S> table(grid * grid * dim);
  for (Index r = 0; r < grid; ++r) {
    for (Index c = 0; c < grid; ++c) {
      S* row = table.data() + (r * grid + c) * dim;
      for (Index i = 0; i < quarter; ++i) {
        const double omega = 1.0 / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(quarter));
        row[i] = static_cast<S>(std::sin(r * omega));
        row[quarter + i] = static_cast<S>(std::cos(r * omega));
        row[2 * quarter + i] = static_cast<S>(std::sin(c * omega));
        row[3 * quarter + i] = static_cast<S>(std::cos(c * omega));
      }
    }
  }
  return Tensor<S>({grid * grid, dim}, std::move(table));
}

template <typename S>
Tensor<S> decoder_forward(const Tensor<S>& latents, const std::vector<MaskSpec>& masks, const DecoderWeights<S>& w,
                          const MAEDecoderConfig& cfg, const Tensor<S>& pos_table) {
  if (latents.rank() != 3) throw ShapeError("decoder_forward: expected [B x n_vis x d], got " + to_string(latents.shape()));
  const Index batch = latents.dim(0), n_vis = latents.dim(1);
  if (static_cast<Index>(masks.size()) != batch) throw ShapeError("decoder_forward: one MaskSpec per image required");
  const Index n = pos_table.dim(0);
  const Index dd = cfg.dim;

  const Tensor<S> x = linear(latents, w.embed.weight, w.embed.bias);
  // Rows 0..B*n_vis-1 are visible latents in shuffled order; the final row is the mask token.
  const Tensor<S> source = concat_rows(reshape(x, {batch * n_vis, dd}), reshape(w.mask_token, {1, dd}));
  std::vector<Index> rows;
  rows.reserve(static_cast<std::size_t>(batch * n));
  for (Index b = 0; b < batch; ++b) {
    const MaskSpec& m = masks[b];
    if (m.n_tokens() != n || m.n_visible != n_vis) throw ShapeError("decoder_forward: MaskSpec does not match latents");
    for (Index j = 0; j < n; ++j) {
      const Index slot = m.ids_restore[j];
      rows.push_back(slot < n_vis ? b * n_vis + slot : batch * n_vis);
    }
  }
  Tensor<S> h = add_broadcast(reshape(gather_rows(source, rows), {batch, n, dd}), pos_table);
  for (const auto& block : w.blocks) h = vit::transformer_block(h, block, cfg.heads);
  h = layer_norm(h, w.norm.weight, w.norm.bias);
  return linear(h, w.pred.weight, w.pred.bias);
}

#define LUVIT_INSTANTIATE_MAE(S)                                                                             \
  template Tensor<S> shuffle_tokens(const Tensor<S>&, const MaskSpec&);                                      \
  template Tensor<S> restore_tokens(const Tensor<S>&, const MaskSpec&);                                      \
  template Tensor<S> normalized_pixel_target(const Tensor<S>&, double);                                      \
  template Tensor<S> mae_loss(const Tensor<S>&, const Tensor<S>&, const std::vector<float>&);                \
  template Tensor<S> sincos_pos_embed(Index, Index);                                                         \
  template Tensor<S> decoder_forward(const Tensor<S>&, const std::vector<MaskSpec>&, const DecoderWeights<S>&, \
                                     const MAEDecoderConfig&, const Tensor<S>&);

LUVIT_INSTANTIATE_MAE(float)
LUVIT_INSTANTIATE_MAE(double)

}  // namespace luvit::mae
