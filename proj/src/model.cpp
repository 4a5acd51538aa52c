#include "luvit/model.hpp"

namespace luvit {
namespace {

struct SpecBuilder {
  std::vector<ParamSpec>& out;

  void linear(const std::string& prefix, Index out_features, Index in_features, bool bias, ParamGroup g, int layer,
              double stddev = 0.02, bool trainable = true) {
    out.push_back({prefix + ".weight", {out_features, in_features}, g, trainable, layer, true, Init::trunc_normal, stddev});
    if (bias) out.push_back({prefix + ".bias", {out_features}, g, trainable, layer, false, Init::zeros, 0.0});
  }

  void norm(const std::string& prefix, Index d, ParamGroup g, int layer) {
    out.push_back({prefix + ".weight", {d}, g, true, layer, false, Init::ones, 0.0});
    out.push_back({prefix + ".bias", {d}, g, true, layer, false, Init::zeros, 0.0});
  }

  void block(const std::string& prefix, Index d, Index hidden, ParamGroup g, int layer) {
    norm(prefix + ".norm1", d, g, layer);
    for (const char* p : {".attn.q", ".attn.k", ".attn.v", ".attn.proj"}) linear(prefix + p, d, d, true, g, layer);
    norm(prefix + ".norm2", d, g, layer);
    linear(prefix + ".mlp.fc1", hidden, d, true, g, layer);
    linear(prefix + ".mlp.fc2", d, hidden, true, g, layer);
  }
};

template <typename S>
TransformerBlockWeights<S> bind_block(const ParamStore<S>& p, const std::string& prefix) {
  auto lin = [&](const std::string& n) { return LinearWeights<S>{p.get(prefix + n + ".weight"), p.get(prefix + n + ".bias")}; };
  auto nrm = [&](const std::string& n) { return NormWeights<S>{p.get(prefix + n + ".weight"), p.get(prefix + n + ".bias")}; };
  return {nrm(".norm1"), lin(".attn.q"), lin(".attn.k"), lin(".attn.v"), lin(".attn.proj"),
          nrm(".norm2"), lin(".mlp.fc1"), lin(".mlp.fc2")};
}

}  // namespace

std::vector<ParamSpec> param_specs(const ModelConfig& cfg, Stage stage) {
  cfg.validate();
  std::vector<ParamSpec> specs;
  SpecBuilder b{specs};
  const ViTConfig& v = cfg.vit;
  const Index d = v.hidden_dim;
  const int top = static_cast<int>(v.depth) + 1;

  b.linear("enc.patch_embed", d, v.patch_dim(), true, ParamGroup::encoder, 0);
  specs.push_back({"enc.pos_embed", {v.num_patches(), d}, ParamGroup::encoder, v.learned_pos_embed, 0, false,
                   Init::trunc_normal, 0.02});
  for (Index i = 0; i < v.depth; ++i) {
    b.block("enc.blocks." + std::to_string(i), d, v.mlp_hidden(), ParamGroup::encoder, static_cast<int>(i) + 1);
  }
  b.norm("enc.norm", d, ParamGroup::encoder, top);

  if (cfg.has_llm_block()) {
    const Index dl = cfg.llm.llm_dim;
    b.linear("fuse.proj_in", dl, d, true, ParamGroup::projections, top);
    b.linear("fuse.proj_out", d, dl, true, ParamGroup::projections, top);
    for (const char* name : fusion::kBlockTensorNames) {
      specs.push_back({std::string("fuse.block.") + name, fusion::block_tensor_shape(name, cfg.llm), ParamGroup::llm_frozen,
                       false, top, false, Init::normal, 0.02});
    }
    if (cfg.has_lora()) {
      const Index r = cfg.lora.rank;
      for (LoRATarget t : {LoRATarget::query, LoRATarget::value}) {
        if (!cfg.lora.targets_contains(t)) continue;
        const std::string prefix = t == LoRATarget::query ? "fuse.lora_q" : "fuse.lora_v";
        specs.push_back({prefix + ".A", {r, dl}, ParamGroup::lora, true, top, true, Init::normal, 0.02});
        specs.push_back({prefix + ".B", {dl, r}, ParamGroup::lora, true, top, true, Init::zeros, 0.0});
      }
    }
  }
  if (cfg.has_mlp_adapter()) {
    const Index hidden = cfg.mlp_adapter_hidden();
    b.linear("adapter.fc1", hidden, d, true, ParamGroup::projections, top);
    b.linear("adapter.fc2", d, hidden, true, ParamGroup::projections, top);
  }

  if (stage == Stage::pretrain) {
    const MAEDecoderConfig& dc = cfg.decoder;
    b.linear("dec.embed", dc.dim, d, true, ParamGroup::decoder, top);
    specs.push_back({"dec.mask_token", {dc.dim}, ParamGroup::decoder, true, top, false, Init::normal, 0.02});
    for (Index i = 0; i < dc.depth; ++i) b.block("dec.blocks." + std::to_string(i), dc.dim, dc.mlp_hidden(), ParamGroup::decoder, top);
    b.norm("dec.norm", dc.dim, ParamGroup::decoder, top);
    b.linear("dec.pred", v.patch_dim(), dc.dim, true, ParamGroup::decoder, top);
  } else {
    b.norm("head.norm", d, ParamGroup::head, top);
    b.linear("head.fc", cfg.num_classes, d, true, ParamGroup::head, top, 0.01);
  }
  return specs;
}

template <typename S>
Model<S>::Model(const ModelConfig& cfg, Stage stage, std::uint64_t seed) : cfg_(cfg), stage_(stage) {
  const std::vector<ParamSpec> specs = param_specs(cfg_, stage_);

  LLMBlockWeights<S> block;
  if (cfg_.has_llm_block()) {
    block = cfg_.llm.init_mode == LLMInit::loaded_pretrained
                ? fusion::load_pretrained_block<S>(cfg_.llm.pretrained_path, cfg_.llm)
                : fusion::random_block<S>(cfg_.llm, derive_seed(seed, {hash_string("llm.random-baseline")}));
  }

  for (const ParamSpec& spec : specs) {
    if (spec.group == ParamGroup::llm_frozen) {
      Tensor<S> t = fusion::block_tensor(block, spec.name.substr(std::string("fuse.block.").size()));
      t.set_requires_grad(false);
      store_.add(spec, t);
      continue;
    }
    Buffer<S> value(numel(spec.shape));
    Rng rng(derive_seed(seed, {hash_string("param"), hash_string(spec.name)}));
    switch (spec.init) {
      case Init::zeros: value.setZero(); break;
      case Init::ones: value.setOnes(); break;
      case Init::normal: fill_normal(value, spec.stddev, rng); break;
      case Init::trunc_normal: fill_trunc_normal(value, spec.stddev, rng); break;
    }
    store_.add(spec, Tensor<S>(spec.shape, std::move(value), spec.trainable));
  }
  if (stage_ == Stage::pretrain) {
    decoder_pos_ = mae::sincos_pos_embed<S>(cfg_.vit.grid(), cfg_.decoder.dim);
  }
  bind_views();
}

template <typename S>
void Model<S>::bind_views() {
  const ParamStore<S>& p = store_;
  encoder_ = EncoderWeights<S>{};
  encoder_.patch_embed = {p.get("enc.patch_embed.weight"), p.get("enc.patch_embed.bias")};
  encoder_.pos_embed = p.get("enc.pos_embed");
  for (Index i = 0; i < cfg_.vit.depth; ++i) encoder_.blocks.push_back(bind_block(p, "enc.blocks." + std::to_string(i)));
  encoder_.norm = {p.get("enc.norm.weight"), p.get("enc.norm.bias")};

  fusion_.reset();
  if (cfg_.has_llm_block()) {
    FusionWeights<S> f;
    f.proj_in = {p.get("fuse.proj_in.weight"), p.get("fuse.proj_in.bias")};
    f.proj_out = {p.get("fuse.proj_out.weight"), p.get("fuse.proj_out.bias")};
    for (const char* name : fusion::kBlockTensorNames) {
      fusion::block_tensor(f.block, name) = p.get(std::string("fuse.block.") + name);
    }
    if (lora_enabled_) {
      const double s = cfg_.lora.scale();
      if (p.contains("fuse.lora_q.A")) {
        f.lora_q = LoRAAdapter<S>{p.get("fuse.lora_q.A"), p.get("fuse.lora_q.B"), s, LoRATarget::query};
      }
      if (p.contains("fuse.lora_v.A")) {
        f.lora_v = LoRAAdapter<S>{p.get("fuse.lora_v.A"), p.get("fuse.lora_v.B"), s, LoRATarget::value};
      }
    }
    fusion_ = std::move(f);
  }

  adapter_.reset();
  if (cfg_.has_mlp_adapter()) {
    adapter_ = MLPAdapterWeights<S>{{p.get("adapter.fc1.weight"), p.get("adapter.fc1.bias")},
                                    {p.get("adapter.fc2.weight"), p.get("adapter.fc2.bias")}};
  }

  decoder_.reset();
  head_.reset();
  if (stage_ == Stage::pretrain) {
    DecoderWeights<S> dw;
    dw.embed = {p.get("dec.embed.weight"), p.get("dec.embed.bias")};
    dw.mask_token = p.get("dec.mask_token");
    for (Index i = 0; i < cfg_.decoder.depth; ++i) dw.blocks.push_back(bind_block(p, "dec.blocks." + std::to_string(i)));
    dw.norm = {p.get("dec.norm.weight"), p.get("dec.norm.bias")};
    dw.pred = {p.get("dec.pred.weight"), p.get("dec.pred.bias")};
    decoder_ = std::move(dw);
  } else {
    head_ = HeadWeights<S>{{p.get("head.norm.weight"), p.get("head.norm.bias")}, {p.get("head.fc.weight"), p.get("head.fc.bias")}};
  }
}

template <typename S>
void Model<S>::set_lora_enabled(bool enabled) {
  lora_enabled_ = enabled;
  bind_views();
}

template <typename S>
Checkpoint Model<S>::to_checkpoint(std::uint64_t step, const std::string& config_text) const {
  Checkpoint ckpt;
  for (const auto& p : store_.entries()) ckpt.add(p.spec.name, p.tensor, p.tensor.requires_grad());
  ckpt.step = step;
  ckpt.config = config_text;
  return ckpt;
}

template <typename S>
LoadSummary Model<S>::load_weights(const Checkpoint& ckpt, bool strict) {
  LoadSummary summary;
  for (auto& p : store_.entries()) {
    const CheckpointTensor* t = ckpt.find(p.spec.name);
    if (t == nullptr) {
      if (strict) throw LoadError("checkpoint is missing tensor \"" + p.spec.name + "\"");
      summary.missing.push_back(p.spec.name);
      continue;
    }
    if (t->shape != p.spec.shape) {
      throw LoadError("tensor \"" + p.spec.name + "\" has shape " + to_string(t->shape) + ", model expects " +
                      to_string(p.spec.shape));
    }
    Buffer<S>& dst = p.tensor.mutable_value();
    for (std::size_t i = 0; i < t->data.size(); ++i) dst[static_cast<Index>(i)] = static_cast<S>(t->data[i]);
    summary.loaded.push_back(p.spec.name);
  }
  for (const auto& t : ckpt.tensors) {
    if (!store_.contains(t.name)) summary.ignored.push_back(t.name);
  }
  return summary;
}

template class Model<float>;
template class Model<double>;

}  // namespace luvit
