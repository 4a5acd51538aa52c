#include "luvit/pipeline.hpp"

namespace luvit {

template <typename S>
Tensor<S> patch_batch(const std::vector<const Tensor<float>*>& images, Index patch_size) {
  if (images.empty()) throw ShapeError("patch_batch: empty batch");
  std::vector<Buffer<S>> parts;
  Index n = 0, pd = 0;
  for (const Tensor<float>* img : images) {
    const PatchSequence<float> seq = vit::patchify(*img, patch_size);
    if (n == 0) {
      n = seq.tokens.dim(0);
      pd = seq.tokens.dim(1);
    } else if (seq.tokens.dim(0) != n || seq.tokens.dim(1) != pd) {
      throw ShapeError("patch_batch: images differ in size");
    }
    parts.push_back(seq.tokens.value().template cast<S>());
  }
  const Index b = static_cast<Index>(images.size());
  Buffer<S> out(b * n * pd);
  for (Index i = 0; i < b; ++i) out.segment(i * n * pd, n * pd) = parts[i];
  return Tensor<S>({b, n, pd}, std::move(out));
}

template <typename S>
Tensor<S> latent_adapter(const Model<S>& model, const Tensor<S>& z_v, ForwardRecording<S>* recording) {
  const int layer = static_cast<int>(model.config().vit.depth);
  if (const FusionWeights<S>* f = model.fusion()) return fusion::fuse_forward(z_v, *f, model.config().llm, recording, layer);
  if (const MLPAdapterWeights<S>* a = model.adapter()) {
    Tensor<S> out = linear(gelu(linear(z_v, a->fc1.weight, a->fc1.bias)), a->fc2.weight, a->fc2.bias);
    if (recording) recording->features[layer] = out;
    return out;
  }
  return z_v;
}

template <typename S>
Tensor<S> encode_latents(const Model<S>& model, const Tensor<S>& tokens, const std::vector<Index>& positions,
                         ForwardRecording<S>* recording) {
  const EncoderWeights<S>& enc = model.encoder();
  const Tensor<S> z_v = vit::encoder_forward(vit::embed(tokens, enc, positions), enc, model.config().vit, recording);
  return layer_norm(latent_adapter(model, z_v, recording), enc.norm.weight, enc.norm.bias);
}

template <typename S>
PretrainOutput<S> pretrain_forward(const Model<S>& model, const Tensor<S>& patches, const std::vector<MaskSpec>& masks) {
  const DecoderWeights<S>* dec = model.decoder();
  if (dec == nullptr) throw ContractError("pretrain_forward: model was built without a decoder");
  if (patches.rank() != 3) throw ShapeError("pretrain_forward: expected [B x N x P], got " + to_string(patches.shape()));
  const Index batch = patches.dim(0), n = patches.dim(1), pd = patches.dim(2);
  if (static_cast<Index>(masks.size()) != batch) throw ShapeError("pretrain_forward: one MaskSpec per image required");
  const Index n_vis = masks.front().n_visible;

  std::vector<Index> rows, positions;
  std::vector<float> mask;
  rows.reserve(static_cast<std::size_t>(batch * n_vis));
  positions.reserve(rows.capacity());
  mask.reserve(static_cast<std::size_t>(batch * n));
  for (Index b = 0; b < batch; ++b) {
    const MaskSpec& m = masks[b];
    if (m.n_tokens() != n || m.n_visible != n_vis) throw ShapeError("pretrain_forward: inconsistent MaskSpec");
    for (Index j = 0; j < n_vis; ++j) {
      rows.push_back(b * n + m.perm[j]);
      positions.push_back(m.perm[j]);
    }
    mask.insert(mask.end(), m.mask.begin(), m.mask.end());
  }

  const Tensor<S> flat = reshape(patches, {batch * n, pd});
  const Tensor<S> visible = reshape(gather_rows(flat, rows), {batch, n_vis, pd});
  const Tensor<S> z_fused = encode_latents(model, visible, positions);
  const Tensor<S> pred = mae::decoder_forward(z_fused, masks, *dec, model.config().decoder, model.decoder_pos_table());

  const Tensor<S> target = reshape(mae::normalized_pixel_target(flat), {batch, n, pd});
  const Tensor<S> loss = mae::mae_loss(pred, target, mask);
  return {loss, pred, target};
}

template <typename S>
PretrainOutput<S> pretrain_forward(const Model<S>& model, const Tensor<S>& patches, double mask_ratio, Rng& rng) {
  std::vector<MaskSpec> masks;
  for (Index b = 0; b < patches.dim(0); ++b) masks.push_back(mae::random_masking(patches.dim(1), mask_ratio, rng));
  return pretrain_forward(model, patches, masks);
}

template <typename S>
Tensor<S> features_forward(const Model<S>& model, const Tensor<S>& patches, ForwardRecording<S>* recording) {
  return encode_latents(model, patches, {}, recording);
}

template <typename S>
Tensor<S> classify_forward(const Model<S>& model, const Tensor<S>& patches, ForwardRecording<S>* recording) {
  const HeadWeights<S>* head = model.head();
  if (head == nullptr) throw ContractError("classify_forward: model was built without a classification head");
  const Tensor<S> pooled = mean(features_forward(model, patches, recording), 1);
  return linear(layer_norm(pooled, head->norm.weight, head->norm.bias), head->fc.weight, head->fc.bias);
}

#define LUVIT_INSTANTIATE_PIPELINE(S)                                                                            \
  template Tensor<S> patch_batch<S>(const std::vector<const Tensor<float>*>&, Index);                           \
  template Tensor<S> latent_adapter(const Model<S>&, const Tensor<S>&, ForwardRecording<S>*);                    \
  template Tensor<S> encode_latents(const Model<S>&, const Tensor<S>&, const std::vector<Index>&,                \
                                    ForwardRecording<S>*);                                                       \
  template PretrainOutput<S> pretrain_forward(const Model<S>&, const Tensor<S>&, const std::vector<MaskSpec>&);  \
  template PretrainOutput<S> pretrain_forward(const Model<S>&, const Tensor<S>&, double, Rng&);                  \
  template Tensor<S> features_forward(const Model<S>&, const Tensor<S>&, ForwardRecording<S>*);                  \
  template Tensor<S> classify_forward(const Model<S>&, const Tensor<S>&, ForwardRecording<S>*);

LUVIT_INSTANTIATE_PIPELINE(float)
LUVIT_INSTANTIATE_PIPELINE(double)

}  // namespace luvit
