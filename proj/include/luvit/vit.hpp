#pragma once

// Standard pre-norm ViT encoder over (possibly masked) patch sequences.

#include <vector>

#include "luvit/attention.hpp"
#include "luvit/config.hpp"

namespace luvit {

template <typename S>
struct LinearWeights {
  Tensor<S> weight;  // [out x in]
  Tensor<S> bias;    // [out] or undefined
};

template <typename S>
struct NormWeights {
  Tensor<S> weight;
  Tensor<S> bias;
};

template <typename S>
struct TransformerBlockWeights {
  NormWeights<S> norm1;
  LinearWeights<S> q, k, v, proj;
  NormWeights<S> norm2;
  LinearWeights<S> fc1, fc2;
};

template <typename S>
struct EncoderWeights {
  LinearWeights<S> patch_embed;  // [d x p^2 C]
  Tensor<S> pos_embed;           // [N x d]
  std::vector<TransformerBlockWeights<S>> blocks;
  NormWeights<S> norm;
};

template <typename S>
struct PatchSequence {
  Tensor<S> tokens;  // [n_tokens x p^2 C]
  Index rows = 0;
  Index cols = 0;
};

namespace vit {

/// Splits an [H x W x C] image into row-major p x p x C patches.
template <typename S>
PatchSequence<S> patchify(const Tensor<S>& image, Index patch_size);

/// Exact inverse of patchify for a full (unmasked) sequence.
template <typename S>
Tensor<S> unpatchify(const PatchSequence<S>& patches, Index patch_size, Index channels);

/// Patch projection plus learned positional embedding.
/// `tokens` is [B x T x p^2 C]; `positions` holds B*T patch indices (empty means 0..T-1 per image).
template <typename S>
Tensor<S> embed(const Tensor<S>& tokens, const EncoderWeights<S>& w, const std::vector<Index>& positions = {});

/// LayerNorm -> MHSA -> residual -> LayerNorm -> GELU MLP -> residual, over [B x T x d].
template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const TransformerBlockWeights<S>& w, Index heads,
                            Tensor<S>* attention_probs = nullptr);

/// The encoder's block stack (the trailing LayerNorm is applied separately by encode()).
template <typename S>
Tensor<S> encoder_forward(const Tensor<S>& embedded, const EncoderWeights<S>& w, const ViTConfig& cfg,
                          ForwardRecording<S>* recording = nullptr);

/// embed -> encoder_forward -> final LayerNorm.
template <typename S>
Tensor<S> encode(const Tensor<S>& tokens, const EncoderWeights<S>& w, const ViTConfig& cfg,
                 const std::vector<Index>& positions = {}, ForwardRecording<S>* recording = nullptr);

}  // namespace vit
}  // namespace luvit
