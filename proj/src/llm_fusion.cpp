#include "luvit/llm_fusion.hpp"

#include <algorithm>
#include <cmath>

namespace luvit {

template <typename S>
LoRAAdapter<S> make_lora_adapter(Index d_out, Index k, Index rank, double scale, LoRATarget target, Rng& rng) {
  if (rank < 1 || 4 * rank > std::min(d_out, k)) {
    throw ContractError("LoRA rank " + std::to_string(rank) + " violates r <= min(" + std::to_string(d_out) + ", " +
                        std::to_string(k) + ") / 4");
  }
  LoRAAdapter<S> adapter;
  Buffer<S> a(rank * k);
  fill_normal(a, 0.02, rng);
  adapter.a = Tensor<S>({rank, k}, std::move(a), true);
  adapter.b = Tensor<S>::zeros({d_out, rank}, true);
  adapter.scale = scale;
  adapter.target = target;
  return adapter;
}

namespace fusion {

Shape block_tensor_shape(const std::string& name, const LLMBlockConfig& cfg) {
  const Index d = cfg.llm_dim, hidden = cfg.mlp_hidden;
  if (name == "attn.wq" || name == "attn.wk" || name == "attn.wv" || name == "attn.wo") return {d, d};
  if (name == "mlp.gate" || name == "mlp.up") return {hidden, d};
  if (name == "mlp.down") return {d, hidden};
  if (name == "norm1.gain" || name == "norm2.gain") return {d};
  throw ContractError("unknown block tensor " + name);
}

template <typename S>
Tensor<S>& block_tensor(LLMBlockWeights<S>& w, const std::string& name) {
  if (name == "attn.wq") return w.wq;
  if (name == "attn.wk") return w.wk;
  if (name == "attn.wv") return w.wv;
  if (name == "attn.wo") return w.wo;
  if (name == "mlp.gate") return w.gate;
  if (name == "mlp.up") return w.up;
  if (name == "mlp.down") return w.down;
  if (name == "norm1.gain") return w.norm1;
  if (name == "norm2.gain") return w.norm2;
  throw ContractError("unknown block tensor " + name);
}

template <typename S>
const Tensor<S>& block_tensor(const LLMBlockWeights<S>& w, const std::string& name) {
  return block_tensor(const_cast<LLMBlockWeights<S>&>(w), name);
}

template <typename S>
Tensor<S> lora_linear(const Tensor<S>& x, const Tensor<S>& base, const LoRAAdapter<S>* adapter) {
  const Tensor<S> y = linear(x, base);
  if (adapter == nullptr) return y;
  if (adapter->a.dim(1) != base.dim(1) || adapter->b.dim(0) != base.dim(0)) {
    throw ShapeError("lora_linear: adapter does not match base " + to_string(base.shape()));
  }
  const Tensor<S> update = linear(linear(x, adapter->a), adapter->b);
  return add(y, scale(update, adapter->scale));
}

template <typename S>
Tensor<S> llm_block_forward(const Tensor<S>& h, const FusionWeights<S>& w, const LLMBlockConfig& cfg,
                            Tensor<S>* attention_probs) {
  const auto& b = w.block;
  const Tensor<S> n1 = rms_norm(h, b.norm1);
  const Tensor<S> q = lora_linear(n1, b.wq, w.lora_q ? &*w.lora_q : nullptr);
  const Tensor<S> k = linear(n1, b.wk);
  const Tensor<S> v = lora_linear(n1, b.wv, w.lora_v ? &*w.lora_v : nullptr);
  const Tensor<S> attn = multi_head_attention(q, k, v, AttentionOptions{cfg.heads, cfg.causal, cfg.rope}, attention_probs);
  const Tensor<S> h1 = add(h, linear(attn, b.wo));
  const Tensor<S> n2 = rms_norm(h1, b.norm2);
  const Tensor<S> gated = mul(silu(linear(n2, b.gate)), linear(n2, b.up));
  return add(h1, linear(gated, b.down));
}

template <typename S>
Tensor<S> fuse_forward(const Tensor<S>& z_v, const FusionWeights<S>& w, const LLMBlockConfig& cfg,
                       ForwardRecording<S>* recording, int layer_index) {
  Tensor<S> probs;
  const Tensor<S> inner = linear(z_v, w.proj_in.weight, w.proj_in.bias);
  const Tensor<S> mixed = llm_block_forward(inner, w, cfg, recording ? &probs : nullptr);
  Tensor<S> out = linear(mixed, w.proj_out.weight, w.proj_out.bias);
  if (recording) {
    recording->attention[layer_index] = probs;
    recording->features[layer_index] = out;
  }
  return out;
}

template <typename S>
LLMBlockWeights<S> random_block(const LLMBlockConfig& cfg, std::uint64_t baseline_seed) {
  const bool surrogate = cfg.init_mode != LLMInit::random_baseline;
  const std::uint64_t seed = surrogate ? cfg.surrogate_seed : baseline_seed;
  const double residual_scale = surrogate ? 1.0 / std::sqrt(2.0 * static_cast<double>(cfg.surrogate_depth)) : 1.0;
  LLMBlockWeights<S> w;
  for (const char* name : kBlockTensorNames) {
    const std::string n = name;
    const Shape shape = block_tensor_shape(n, cfg);
    Buffer<S> value(numel(shape));
    if (n == "norm1.gain" || n == "norm2.gain") {
      value.setOnes();
    } else {
      Rng rng(derive_seed(seed, {hash_string("llm.block"), hash_string(n)}));
      const bool residual_out = n == "attn.wo" || n == "mlp.down";
      fill_normal(value, 0.02 * (residual_out ? residual_scale : 1.0), rng);
    }
    block_tensor(w, n) = Tensor<S>(shape, std::move(value), false);
  }
  return w;
}

template <typename S>
LLMBlockWeights<S> load_pretrained_block(const std::filesystem::path& path, const LLMBlockConfig& cfg) {
  const Checkpoint ckpt = load_checkpoint(path);
  LLMBlockWeights<S> w;
  for (const char* name : kBlockTensorNames) {
    const std::string n = name;
    const auto* t = ckpt.find(n);
    if (t == nullptr) {
      // Report the short projection name ("W_v") alongside the canonical one.
      std::string label = n;
      if (n.rfind("attn.w", 0) == 0) label = std::string("W_") + n.back() + " (" + n + ")";
      throw LoadError("pretrained block is missing tensor " + label);
    }
    const Shape expected = block_tensor_shape(n, cfg);
    if (t->shape != expected) {
      throw LoadError("pretrained block tensor " + n + " has shape " + to_string(t->shape) + ", expected " + to_string(expected));
    }
    Tensor<S> tensor = to_tensor<S>(*t);
    tensor.set_requires_grad(false);
    block_tensor(w, n) = tensor;
  }
  return w;
}

template <typename S>
Checkpoint block_to_checkpoint(const LLMBlockWeights<S>& w) {
  Checkpoint ckpt;
  for (const char* name : kBlockTensorNames) ckpt.add(name, block_tensor(w, name), false);
  return ckpt;
}

#define LUVIT_INSTANTIATE_FUSION(S)                                                                           \
  template Tensor<S>& block_tensor(LLMBlockWeights<S>&, const std::string&);                                  \
  template const Tensor<S>& block_tensor(const LLMBlockWeights<S>&, const std::string&);                      \
  template Tensor<S> lora_linear(const Tensor<S>&, const Tensor<S>&, const LoRAAdapter<S>*);                  \
  template Tensor<S> llm_block_forward(const Tensor<S>&, const FusionWeights<S>&, const LLMBlockConfig&,      \
                                       Tensor<S>*);                                                           \
  template Tensor<S> fuse_forward(const Tensor<S>&, const FusionWeights<S>&, const LLMBlockConfig&,           \
                                  ForwardRecording<S>*, int);                                                 \
  template LLMBlockWeights<S> random_block(const LLMBlockConfig&, std::uint64_t);                             \
  template LLMBlockWeights<S> load_pretrained_block(const std::filesystem::path&, const LLMBlockConfig&);     \
  template Checkpoint block_to_checkpoint(const LLMBlockWeights<S>&);

LUVIT_INSTANTIATE_FUSION(float)
LUVIT_INSTANTIATE_FUSION(double)

}  // namespace fusion

template LoRAAdapter<float> make_lora_adapter(Index, Index, Index, double, LoRATarget, Rng&);
template LoRAAdapter<double> make_lora_adapter(Index, Index, Index, double, LoRATarget, Rng&);

}  // namespace luvit
