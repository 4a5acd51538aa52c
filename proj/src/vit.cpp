#include "luvit/vit.hpp"

namespace luvit::vit {

template <typename S>
PatchSequence<S> patchify(const Tensor<S>& image, Index patch_size) {
  if (image.rank() != 3) throw ShapeError("patchify: expected [H x W x C], got " + to_string(image.shape()));
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch_size <= 0 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("patchify: " + to_string(image.shape()) + " not divisible by patch size " + std::to_string(patch_size));
  }
  const Index rows = h / patch_size, cols = w / patch_size, pd = patch_size * patch_size * c;
  Buffer<S> out(rows * cols * pd);
  const auto& src = image.value();
  for (Index pr = 0; pr < rows; ++pr) {
    for (Index pc = 0; pc < cols; ++pc) {
      S* dst = out.data() + (pr * cols + pc) * pd;
      for (Index y = 0; y < patch_size; ++y) {
        for (Index x = 0; x < patch_size; ++x) {
          for (Index ch = 0; ch < c; ++ch) {
            *dst++ = src[((pr * patch_size + y) * w + pc * patch_size + x) * c + ch];
          }
        }
      }
    }
  }
  return {Tensor<S>({rows * cols, pd}, std::move(out)), rows, cols};
}

template <typename S>
Tensor<S> unpatchify(const PatchSequence<S>& patches, Index patch_size, Index channels) {
  const Index rows = patches.rows, cols = patches.cols, pd = patch_size * patch_size * channels;
  if (patches.tokens.numel() != rows * cols * pd) throw ShapeError("unpatchify: token count does not fill the grid");
  const Index h = rows * patch_size, w = cols * patch_size;
  Buffer<S> out(h * w * channels);
  const S* src = patches.tokens.value().data();
  for (Index pr = 0; pr < rows; ++pr) {
    for (Index pc = 0; pc < cols; ++pc) {
      for (Index y = 0; y < patch_size; ++y) {
        for (Index x = 0; x < patch_size; ++x) {
          for (Index ch = 0; ch < channels; ++ch) {
            out[((pr * patch_size + y) * w + pc * patch_size + x) * channels + ch] = *src++;
          }
        }
      }
    }
  }
  return Tensor<S>({h, w, channels}, std::move(out));
}

template <typename S>
Tensor<S> embed(const Tensor<S>& tokens, const EncoderWeights<S>& w, const std::vector<Index>& positions) {
  if (tokens.rank() != 3) throw ShapeError("embed: expected [B x T x P], got " + to_string(tokens.shape()));
  const Index batch = tokens.dim(0), count = tokens.dim(1);
  const Tensor<S> projected = linear(tokens, w.patch_embed.weight, w.patch_embed.bias);
  if (positions.empty()) {
    if (count != w.pos_embed.dim(0)) throw ShapeError("embed: full sequence length does not match positional table");
    return add_broadcast(projected, w.pos_embed);
  }
  if (static_cast<Index>(positions.size()) != batch * count) throw ShapeError("embed: one position per token required");
  const Tensor<S> pos = reshape(gather_rows(w.pos_embed, positions), projected.shape());
  return add(projected, pos);
}

template <typename S>
Tensor<S> transformer_block(const Tensor<S>& x, const TransformerBlockWeights<S>& w, Index heads,
                            Tensor<S>* attention_probs) {
  const Tensor<S> h = layer_norm(x, w.norm1.weight, w.norm1.bias);
  const Tensor<S> attn = multi_head_attention(linear(h, w.q.weight, w.q.bias), linear(h, w.k.weight, w.k.bias),
                                              linear(h, w.v.weight, w.v.bias), AttentionOptions{heads, false, false},
                                              attention_probs);
  const Tensor<S> x1 = add(x, linear(attn, w.proj.weight, w.proj.bias));
  const Tensor<S> h2 = layer_norm(x1, w.norm2.weight, w.norm2.bias);
  const Tensor<S> mlp = linear(gelu(linear(h2, w.fc1.weight, w.fc1.bias)), w.fc2.weight, w.fc2.bias);
  return add(x1, mlp);
}

template <typename S>
Tensor<S> encoder_forward(const Tensor<S>& embedded, const EncoderWeights<S>& w, const ViTConfig& cfg,
                          ForwardRecording<S>* recording) {
  Tensor<S> x = embedded;
  for (std::size_t i = 0; i < w.blocks.size(); ++i) {
    Tensor<S> probs;
    x = transformer_block(x, w.blocks[i], cfg.heads, recording ? &probs : nullptr);
    if (recording) {
      recording->attention[static_cast<int>(i)] = probs;
      recording->features[static_cast<int>(i)] = x;
    }
  }
  return x;
}

template <typename S>
Tensor<S> encode(const Tensor<S>& tokens, const EncoderWeights<S>& w, const ViTConfig& cfg,
                 const std::vector<Index>& positions, ForwardRecording<S>* recording) {
  const Tensor<S> z = encoder_forward(embed(tokens, w, positions), w, cfg, recording);
  return layer_norm(z, w.norm.weight, w.norm.bias);
}

#define LUVIT_INSTANTIATE_VIT(S)                                                                                   \
  template PatchSequence<S> patchify(const Tensor<S>&, Index);                                                     \
  template Tensor<S> unpatchify(const PatchSequence<S>&, Index, Index);                                            \
  template Tensor<S> embed(const Tensor<S>&, const EncoderWeights<S>&, const std::vector<Index>&);                 \
  template Tensor<S> transformer_block(const Tensor<S>&, const TransformerBlockWeights<S>&, Index, Tensor<S>*);    \
  template Tensor<S> encoder_forward(const Tensor<S>&, const EncoderWeights<S>&, const ViTConfig&,                 \
                                     ForwardRecording<S>*);                                                        \
  template Tensor<S> encode(const Tensor<S>&, const EncoderWeights<S>&, const ViTConfig&, const std::vector<Index>&, \
                            ForwardRecording<S>*);

LUVIT_INSTANTIATE_VIT(float)
LUVIT_INSTANTIATE_VIT(double)

}  // namespace luvit::vit
