#include "luvit/config.hpp"

#include <algorithm>
#include <cmath>

namespace luvit {

void ViTConfig::validate() const {
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    throw ConfigError("model.image_size", "must be a positive multiple of patch_size");
  }
  if (channels <= 0) throw ConfigError("model.channels", "must be positive");
  if (depth < 0) throw ConfigError("model.depth", "must be non-negative");
  if (heads <= 0 || hidden_dim <= 0 || hidden_dim % heads != 0) {
    throw ConfigError("model.hidden_dim", "must be a positive multiple of heads");
  }
  if (!(mlp_ratio > 0.0)) throw ConfigError("model.mlp_ratio", "must be positive");
}

void LLMBlockConfig::validate() const {
  if (heads <= 0 || llm_dim <= 0 || llm_dim % heads != 0) {
    throw ConfigError("model.llm.dim", "must be a positive multiple of llm heads");
  }
  if (mlp_hidden <= 0) throw ConfigError("model.llm.mlp_hidden", "must be positive");
  if (rope && (llm_dim / heads) % 2 != 0) throw ConfigError("model.llm.rope", "needs an even head dimension");
  if (init_mode == LLMInit::loaded_pretrained && pretrained_path.empty()) {
    throw ConfigError("model.llm.pretrained_path", "required when init_mode is loaded-pretrained");
  }
}

bool LoRAConfig::targets_contains(LoRATarget t) const {
  return std::find(targets.begin(), targets.end(), t) != targets.end();
}

void MAEDecoderConfig::validate() const {
  if (depth < 1) throw ConfigError("model.decoder.depth", "must be at least 1");
  if (heads <= 0 || dim % heads != 0) throw ConfigError("model.decoder.dim", "must be a positive multiple of heads");
  if (dim % 4 != 0) throw ConfigError("model.decoder.dim", "must be divisible by 4 for the 2D sin-cos table");
}

Index ModelConfig::mlp_adapter_hidden() const {
  const Index d = vit.hidden_dim, dl = llm.llm_dim;
  switch (variant) {
    case Variant::vit_mlp_p:
      return dl;
    case Variant::vit_mlp_l: {
      // Width whose two-layer adapter matches projections + LoRA of the LUViT row.
      const double projections = static_cast<double>(2 * d * dl + dl + d);
      const double adapters = static_cast<double>(lora.targets.size() * lora.rank * 2 * dl);
      return static_cast<Index>(std::llround((projections + adapters - static_cast<double>(d)) / static_cast<double>(2 * d + 1)));
    }
    default:
      return 0;
  }
}

void ModelConfig::validate() const {
  vit.validate();
  decoder.validate();
  if (num_classes < 2) throw ConfigError("model.num_classes", "must be at least 2");
  if (has_llm_block() || has_mlp_adapter()) llm.validate();
  if (has_lora()) {
    const Index limit = llm.llm_dim / 4;
    if (lora.rank < 1 || lora.rank > limit) {
      throw ConfigError("model.lora.rank", "must lie in [1, llm.dim / 4] = [1, " + std::to_string(limit) + "]");
    }
    if (lora.targets.empty()) throw ConfigError("model.lora.targets", "must name at least one projection");
  }
}

ModelConfig full_scale_config(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  cfg.vit = ViTConfig{224, 16, 3, 12, 768, 12, 4.0, true};
  cfg.llm.llm_dim = 4096;
  cfg.llm.heads = 32;
  cfg.llm.mlp_hidden = 11008;
  cfg.lora.rank = 16;
  cfg.lora.alpha = 16.0;
  cfg.decoder = MAEDecoderConfig{8, 512, 16, 4.0};
  cfg.num_classes = 1000;
  return cfg;
}

ModelConfig desk_config(Variant variant) {
  ModelConfig cfg;
  cfg.variant = variant;
  return cfg;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::vit: return "vit";
    case Variant::vit_mlp_p: return "vit-mlp-p";
    case Variant::vit_llama: return "vit-llama";
    case Variant::vit_mlp_l: return "vit-mlp-l";
    case Variant::luvit: return "luvit";
  }
  return "?";
}

Variant variant_from_string(const std::string& s) {
  for (Variant v : {Variant::vit, Variant::vit_mlp_p, Variant::vit_llama, Variant::vit_mlp_l, Variant::luvit}) {
    if (to_string(v) == s) return v;
  }
  throw ConfigError("model.variant", "unknown variant '" + s + "'");
}

std::string to_string(LLMInit m) {
  switch (m) {
    case LLMInit::surrogate_random: return "surrogate-random";
    case LLMInit::loaded_pretrained: return "loaded-pretrained";
    case LLMInit::random_baseline: return "random-baseline";
  }
  return "?";
}

LLMInit llm_init_from_string(const std::string& s) {
  for (LLMInit m : {LLMInit::surrogate_random, LLMInit::loaded_pretrained, LLMInit::random_baseline}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("model.llm.init_mode", "unknown init mode '" + s + "'");
}

std::string to_string(LoRATarget t) { return t == LoRATarget::query ? "query" : "value"; }

LoRATarget lora_target_from_string(const std::string& s) {
  if (s == "query") return LoRATarget::query;
  if (s == "value") return LoRATarget::value;
  throw ConfigError("model.lora.targets", "unknown target '" + s + "'");
}

}  // namespace luvit
