#pragma once

// End-to-end forward passes:
//   pre-training   x' = Dec( LN( Fuse( Blocks(x_vis) ) ), ids_restore )
//   classification logits = Head( mean_tokens( LN( Fuse( Blocks(x) ) ) ) )
// LN is the encoder's closing LayerNorm (enc.norm); it follows the latent adapter.

#include <vector>

#include "luvit/model.hpp"

namespace luvit {

/// Stacks patchified [H x W x C] images into [B x N x p^2 C].
template <typename S>
Tensor<S> patch_batch(const std::vector<const Tensor<float>*>& images, Index patch_size);

/// Whatever sits between encoder and decoder/head: the fusion block, the MLP baseline, or nothing.
template <typename S>
Tensor<S> latent_adapter(const Model<S>& model, const Tensor<S>& z_v, ForwardRecording<S>* recording = nullptr);

/// Patch embedding, encoder blocks, latent adapter, then enc.norm: the latent z'_v fed to decoder or head.
template <typename S>
Tensor<S> encode_latents(const Model<S>& model, const Tensor<S>& tokens, const std::vector<Index>& positions = {},
                         ForwardRecording<S>* recording = nullptr);

template <typename S>
struct PretrainOutput {
  Tensor<S> loss;    // scalar
  Tensor<S> pred;    // [B x N x p^2 C], normalized-pixel space
  Tensor<S> target;  // [B x N x p^2 C]
};

template <typename S>
PretrainOutput<S> pretrain_forward(const Model<S>& model, const Tensor<S>& patches, const std::vector<MaskSpec>& masks);

/// Draws one MaskSpec per image from `rng` at the given ratio, then runs the pass above.
template <typename S>
PretrainOutput<S> pretrain_forward(const Model<S>& model, const Tensor<S>& patches, double mask_ratio, Rng& rng);

/// z'_v for every patch: [B x N x d_vit].
template <typename S>
Tensor<S> features_forward(const Model<S>& model, const Tensor<S>& patches, ForwardRecording<S>* recording = nullptr);

template <typename S>
Tensor<S> classify_forward(const Model<S>& model, const Tensor<S>& patches, ForwardRecording<S>* recording = nullptr);

}  // namespace luvit
