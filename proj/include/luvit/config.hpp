#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "luvit/tensor.hpp"

namespace luvit {

struct ViTConfig {
  Index image_size = 32;
  Index patch_size = 4;
  Index channels = 3;
  Index depth = 4;
  Index hidden_dim = 64;
  Index heads = 4;
  double mlp_ratio = 4.0;
  bool learned_pos_embed = true;

  Index grid() const { return image_size / patch_size; }
  Index num_patches() const { return grid() * grid(); }
  Index patch_dim() const { return patch_size * patch_size * channels; }
  Index mlp_hidden() const { return static_cast<Index>(static_cast<double>(hidden_dim) * mlp_ratio); }

  /// Throws ConfigError on inconsistent extents.
  void validate() const;
};

enum class LLMInit { surrogate_random, loaded_pretrained, random_baseline };

struct LLMBlockConfig {
  Index llm_dim = 128;
  Index heads = 4;
  Index mlp_hidden = 344;
  bool causal = false;
  bool rope = false;
  LLMInit init_mode = LLMInit::surrogate_random;
  std::string pretrained_path;
  // The surrogate stands in for a fixed pretrained block, so it has its own seed.
  std::uint64_t surrogate_seed = 20240607;
  Index surrogate_depth = 32;

  void validate() const;
};

enum class LoRATarget { query, value };

struct LoRAConfig {
  Index rank = 4;
  double alpha = 4.0;
  std::vector<LoRATarget> targets{LoRATarget::query, LoRATarget::value};

  double scale() const { return alpha / static_cast<double>(rank); }
  bool targets_contains(LoRATarget t) const;
};

struct MAEDecoderConfig {
  Index depth = 1;
  Index dim = 32;
  Index heads = 2;
  double mlp_ratio = 4.0;

  Index mlp_hidden() const { return static_cast<Index>(static_cast<double>(dim) * mlp_ratio); }
  void validate() const;
};

/// Rows of the component ablation: plain ViT, ViT + MLP matched to the projections,
/// ViT + frozen LLM block without LoRA, ViT + MLP matched to projections + LoRA, and LUViT.
enum class Variant { vit, vit_mlp_p, vit_llama, vit_mlp_l, luvit };

struct ModelConfig {
  Variant variant = Variant::luvit;
  ViTConfig vit;
  LLMBlockConfig llm;
  LoRAConfig lora;
  MAEDecoderConfig decoder;
  Index num_classes = 9;

  bool has_llm_block() const { return variant == Variant::vit_llama || variant == Variant::luvit; }
  bool has_lora() const { return variant == Variant::luvit; }
  bool has_mlp_adapter() const { return variant == Variant::vit_mlp_p || variant == Variant::vit_mlp_l; }
  /// Hidden width of the MLP baseline adapter (0 when the variant has none).
  Index mlp_adapter_hidden() const;

  void validate() const;
};

/// ViT/B encoder, final LLaMA-7B block (4096 wide, 32 heads, SwiGLU 11008), 8x512 decoder, 1000 classes.
ModelConfig full_scale_config(Variant variant);
/// Desk-scale defaults: 32x32x3 images, p=4, depth 4, d=64, 4 heads.
ModelConfig desk_config(Variant variant);

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
std::string to_string(LLMInit m);
LLMInit llm_init_from_string(const std::string& s);
std::string to_string(LoRATarget t);
LoRATarget lora_target_from_string(const std::string& s);

}  // namespace luvit
