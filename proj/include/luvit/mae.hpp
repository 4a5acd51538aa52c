#pragma once

// Masked-autoencoder pieces: per-sample random masking, the lightweight
// decoder, and the normalized-pixel reconstruction loss.

#include <vector>

#include "luvit/rng.hpp"
#include "luvit/vit.hpp"

namespace luvit {

/// Per-sample masking bookkeeping. perm lists patch indices in shuffled order;
/// the first n_visible entries are kept. ids_restore is its inverse, and
/// mask[j] == 1 marks patch j as hidden from the encoder.
struct MaskSpec {
  std::vector<Index> perm;
  std::vector<Index> ids_restore;
  Index n_visible = 0;
  std::vector<float> mask;

  Index n_tokens() const { return static_cast<Index>(perm.size()); }
  /// Patch indices fed to the encoder, in shuffled order.
  std::vector<Index> visible() const { return {perm.begin(), perm.begin() + n_visible}; }
};

template <typename S>
struct DecoderWeights {
  LinearWeights<S> embed;  // [d_dec x d_vit]
  Tensor<S> mask_token;    // [d_dec]
  std::vector<TransformerBlockWeights<S>> blocks;
  NormWeights<S> norm;
  LinearWeights<S> pred;   // [p^2 C x d_dec]
};

namespace mae {

/// Visible count round(N * (1 - ratio)) clamped to >= 1 (a clamp logs a warning).
Index visible_count(Index n_tokens, double ratio);

/// Uniformly random permutation drawn from `rng`; deterministic given its state.
MaskSpec random_masking(Index n_tokens, double ratio, Rng& rng);

/// Reorders rows of x[N x k] by perm and back again.
template <typename S>
Tensor<S> shuffle_tokens(const Tensor<S>& x, const MaskSpec& m);
template <typename S>
Tensor<S> restore_tokens(const Tensor<S>& shuffled, const MaskSpec& m);

/// Per-patch standardization: (x - mean) / sqrt(var + eps) over each row.
template <typename S>
Tensor<S> normalized_pixel_target(const Tensor<S>& patches, double eps = 1e-6);

/// Mean over masked patches of the per-patch mean squared error.
/// `mask` has one entry per patch row of pred (1 = masked); throws ContractError if none is masked.
template <typename S>
Tensor<S> mae_loss(const Tensor<S>& pred, const Tensor<S>& target, const std::vector<float>& mask);

/// Fixed 2D sin-cos table [grid^2 x dim] (first half encodes rows, second half columns).
template <typename S>
Tensor<S> sincos_pos_embed(Index grid, Index dim);

/// Decoder over visible latents [B x n_vis x d_vit]: embed, insert mask tokens, unshuffle,
/// add the fixed positional table, run the blocks, and predict p^2 C pixels per patch.
template <typename S>
Tensor<S> decoder_forward(const Tensor<S>& latents, const std::vector<MaskSpec>& masks, const DecoderWeights<S>& w,
                          const MAEDecoderConfig& cfg, const Tensor<S>& pos_table);

}  // namespace mae
}  // namespace luvit
