#pragma once

// Frozen LLaMA-style block bracketed by trainable linear projections, with
// LoRA adapters on the query/value projections:
//
//   z'_v = proj_out( block( proj_in(z_v) ) )
//
// The block keeps LLaMA's pre-RMSNorm / SwiGLU layout and bias-free projections.
// Causal masking and rotary embeddings are configurable and off by default.

#include <array>
#include <filesystem>
#include <optional>
#include <string>

#include "luvit/checkpoint.hpp"
#include "luvit/rng.hpp"
#include "luvit/vit.hpp"

namespace luvit {

/// y = x W0^T + scale * (x A^T) B^T with A: [r x k], B: [d_out x r].
template <typename S>
struct LoRAAdapter {
  Tensor<S> a;
  Tensor<S> b;
  double scale = 1.0;
  LoRATarget target = LoRATarget::query;

  Index rank() const { return a.dim(0); }
};

/// A ~ N(0, 0.02), B = 0, both trainable. Throws ContractError unless rank <= min(d_out, k) / 4.
template <typename S>
LoRAAdapter<S> make_lora_adapter(Index d_out, Index k, Index rank, double scale, LoRATarget target, Rng& rng);

template <typename S>
struct LLMBlockWeights {
  Tensor<S> wq, wk, wv, wo;  // [d x d]
  Tensor<S> gate, up;        // [hidden x d]
  Tensor<S> down;            // [d x hidden]
  Tensor<S> norm1, norm2;    // RMSNorm gains [d]
};

template <typename S>
struct FusionWeights {
  LinearWeights<S> proj_in;   // [d_llm x d_vit]
  LinearWeights<S> proj_out;  // [d_vit x d_llm]
  LLMBlockWeights<S> block;
  std::optional<LoRAAdapter<S>> lora_q;
  std::optional<LoRAAdapter<S>> lora_v;
};

namespace fusion {

/// Canonical tensor names of a pretrained-block dump, in storage order.
inline constexpr std::array<const char*, 9> kBlockTensorNames = {
    "attn.wq", "attn.wk", "attn.wv", "attn.wo", "mlp.gate", "mlp.up", "mlp.down", "norm1.gain", "norm2.gain"};

/// Expected shape of a canonical block tensor.
Shape block_tensor_shape(const std::string& name, const LLMBlockConfig& cfg);

template <typename S>
Tensor<S>& block_tensor(LLMBlockWeights<S>& w, const std::string& name);
template <typename S>
const Tensor<S>& block_tensor(const LLMBlockWeights<S>& w, const std::string& name);

template <typename S>
Tensor<S> lora_linear(const Tensor<S>& x, const Tensor<S>& base, const LoRAAdapter<S>* adapter);

template <typename S>
Tensor<S> llm_block_forward(const Tensor<S>& h, const FusionWeights<S>& w, const LLMBlockConfig& cfg,
                            Tensor<S>* attention_probs = nullptr);

/// proj_out(llm_block_forward(proj_in(z_v))); both projections are plain affine maps.
/// With a recording, the block's attention and z'_v are stored at `layer_index`.
template <typename S>
Tensor<S> fuse_forward(const Tensor<S>& z_v, const FusionWeights<S>& w, const LLMBlockConfig& cfg,
                       ForwardRecording<S>* recording = nullptr, int layer_index = 0);

/// Seeded random block weights (frozen). surrogate-random uses the config's surrogate seed with
/// LLaMA-like std 0.02 and residual-output projections scaled by 1/sqrt(2 * surrogate_depth);
/// random-baseline draws plain N(0, 0.02) weights from `baseline_seed`.
template <typename S>
LLMBlockWeights<S> random_block(const LLMBlockConfig& cfg, std::uint64_t baseline_seed);

/// Reads a dump in the checkpoint format; every canonical name must be present with the configured shape.
template <typename S>
LLMBlockWeights<S> load_pretrained_block(const std::filesystem::path& path, const LLMBlockConfig& cfg);

template <typename S>
Checkpoint block_to_checkpoint(const LLMBlockWeights<S>& w);

}  // namespace fusion
}  // namespace luvit
