#pragma once

// Model assembly for every ablation variant. Parameters live in a ParamStore
// (one name each); typed weight views share the same tensors.
//
// Parameter naming:
//   enc.patch_embed.{weight,bias}  enc.pos_embed  enc.blocks.<i>.<...>  enc.norm.{weight,bias}
//   fuse.proj_in.*  fuse.proj_out.*  fuse.block.<canonical name>  fuse.lora_{q,v}.{A,B}
//   adapter.fc{1,2}.{weight,bias}   (MLP baselines)
//   dec.embed.*  dec.mask_token  dec.blocks.<i>.<...>  dec.norm.*  dec.pred.*   (pre-training only)
//   head.norm.*  head.fc.*                                                        (classification only)

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "luvit/checkpoint.hpp"
#include "luvit/config.hpp"
#include "luvit/llm_fusion.hpp"
#include "luvit/mae.hpp"
#include "luvit/params.hpp"

namespace luvit {

enum class Stage { pretrain, classify };

/// Shape-only parameter list of a model; no allocation, so it works at full scale.
std::vector<ParamSpec> param_specs(const ModelConfig& cfg, Stage stage);

template <typename S>
struct MLPAdapterWeights {
  LinearWeights<S> fc1;
  LinearWeights<S> fc2;
};

template <typename S>
struct HeadWeights {
  NormWeights<S> norm;
  LinearWeights<S> fc;
};

struct LoadSummary {
  std::vector<std::string> loaded;
  std::vector<std::string> missing;  // kept at initialisation
  std::vector<std::string> ignored;  // present in the checkpoint but not in this model
};

template <typename S>
class Model {
 public:
  Model(const ModelConfig& cfg, Stage stage, std::uint64_t seed);

  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  const ModelConfig& config() const { return cfg_; }
  Stage stage() const { return stage_; }

  ParamStore<S>& params() { return store_; }
  const ParamStore<S>& params() const { return store_; }

  const EncoderWeights<S>& encoder() const { return encoder_; }
  const FusionWeights<S>* fusion() const { return fusion_ ? &*fusion_ : nullptr; }
  const MLPAdapterWeights<S>* adapter() const { return adapter_ ? &*adapter_ : nullptr; }
  const DecoderWeights<S>* decoder() const { return decoder_ ? &*decoder_ : nullptr; }
  const HeadWeights<S>* head() const { return head_ ? &*head_ : nullptr; }
  const Tensor<S>& decoder_pos_table() const { return decoder_pos_; }

  /// Drops the LoRA adapters from the forward path (their parameters stay registered).
  void set_lora_enabled(bool enabled);
  bool lora_enabled() const { return lora_enabled_; }

  Checkpoint to_checkpoint(std::uint64_t step = 0, const std::string& config_text = {}) const;

  /// Copies every checkpoint tensor whose name matches a parameter (shape-checked, LoadError on mismatch).
  /// With `strict`, a parameter absent from the checkpoint is a LoadError naming it.
  LoadSummary load_weights(const Checkpoint& ckpt, bool strict);

 private:
  void bind_views();

  ModelConfig cfg_;
  Stage stage_;
  ParamStore<S> store_;
  EncoderWeights<S> encoder_;
  std::optional<FusionWeights<S>> fusion_;
  std::optional<MLPAdapterWeights<S>> adapter_;
  std::optional<DecoderWeights<S>> decoder_;
  std::optional<HeadWeights<S>> head_;
  Tensor<S> decoder_pos_;
  bool lora_enabled_ = true;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace luvit
