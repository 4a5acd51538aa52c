#include <doctest.h>

#include "helpers.hpp"
#include "luvit/model.hpp"
#include "luvit/vit.hpp"

using namespace luvit;
using test::randn;

namespace {

// Encoder weights of a micro ViT with non-trivial biases so no check passes by accident.
EncoderWeights<double> micro_encoder(Index depth = 1) {
  ModelConfig cfg = test::micro_config(Variant::vit);
  cfg.vit.depth = depth;
  const Model<double> model(cfg, Stage::classify, 7);
  EncoderWeights<double> w = model.encoder();
  w.patch_embed.bias.mutable_value() = randn({16}, 70).value();
  return w;
}

}  // namespace

TEST_CASE("patchify layout") {
  const Tensor<double> img = Tensor<double>::from_vector({4, 4, 1}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15});
  const PatchSequence<double> p = vit::patchify(img, 2);
  CHECK(p.rows == 2);
  CHECK(p.cols == 2);
  CHECK(p.tokens.shape() == Shape{4, 4});
  const std::vector<double> expect = {0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13, 10, 11, 14, 15};
  for (Index i = 0; i < 16; ++i) CHECK(p.tokens[i] == expect[static_cast<std::size_t>(i)]);

  const PatchSequence<float> full = vit::patchify(Tensor<float>::zeros({224, 224, 3}), 16);
  CHECK(full.tokens.shape() == Shape{196, 768});

  const Tensor<float> x = randn<float>({8, 12, 3}, 4);
  const Tensor<float> back = vit::unpatchify(vit::patchify(x, 4), 4, 3);
  CHECK(back.shape() == x.shape());
  CHECK(test::bit_equal(back.value(), x.value()));

  CHECK_THROWS_AS(vit::patchify(Tensor<float>::zeros({6, 8, 3}), 4), ShapeError);
}

TEST_CASE("embed") {
  EncoderWeights<double> w = micro_encoder();
  const Tensor<double> zeros = Tensor<double>::zeros({1, 4, 48});
  w.pos_embed.mutable_value().setZero();
  const Tensor<double> e0 = vit::embed(zeros, w);
  for (Index t = 0; t < 4; ++t) {
    for (Index j = 0; j < 16; ++j) CHECK(e0[t * 16 + j] == w.patch_embed.bias[j]);
  }

  w.pos_embed.mutable_value() = randn({4, 16}, 8).value();
  Tensor<double> same = Tensor<double>::zeros({1, 4, 48});
  const Tensor<double> patch = randn({48}, 9);
  for (Index t = 0; t < 4; ++t) same.mutable_value().segment(t * 48, 48) = patch.value();
  const Tensor<double> e = vit::embed(same, w);
  for (Index j = 0; j < 16; ++j) {
    CHECK(e[16 + j] - e[48 + j] == doctest::Approx(w.pos_embed[16 + j] - w.pos_embed[48 + j]).epsilon(1e-12));
  }

  const Tensor<double> tokens = randn({1, 4, 48}, 10);
  const Tensor<double> full = vit::embed(tokens, w);
  const Tensor<double> sub = vit::embed(reshape(gather_rows(reshape(tokens, {4, 48}), {3, 1}), {1, 2, 48}), w, {3, 1});
  for (Index j = 0; j < 16; ++j) {
    CHECK(sub[j] == doctest::Approx(full[48 + j]).epsilon(1e-14));
    CHECK(sub[16 + j] == doctest::Approx(full[16 + j]).epsilon(1e-14));
  }
  CHECK_THROWS_AS(vit::embed(tokens, w, {0, 1}), ShapeError);
}

TEST_CASE("encoder_forward") {
  ViTConfig cfg = test::micro_config().vit;
  const EncoderWeights<double> none = micro_encoder(0);
  const Tensor<double> x = randn({2, 4, 16}, 11);
  CHECK(test::bit_equal(vit::encoder_forward(x, none, cfg).value(), x.value()));

  const EncoderWeights<double> w = micro_encoder(1);
  for (Index n : {1, 2, 3, 4}) CHECK(vit::encoder_forward(randn({2, n, 16}, 12), w, cfg).shape() == Shape{2, n, 16});

  // Without positional information the blocks are permutation-equivariant.
  const std::vector<Index> perm = {2, 0, 3, 1};
  const Tensor<double> y = vit::encoder_forward(x, w, cfg);
  std::vector<Index> rows;
  for (Index b = 0; b < 2; ++b) {
    for (Index t : perm) rows.push_back(b * 4 + t);
  }
  const Tensor<double> xp = reshape(gather_rows(reshape(x, {8, 16}), rows), {2, 4, 16});
  const Tensor<double> yp = vit::encoder_forward(xp, w, cfg);
  const Tensor<double> expect = gather_rows(reshape(y, {8, 16}), rows);
  for (Index i = 0; i < expect.numel(); ++i) CHECK(std::abs(yp[i] - expect[i]) < 1e-5);
}

TEST_CASE("patch projection gradient matches finite differences") {
  const EncoderWeights<double> w = micro_encoder();
  const ViTConfig cfg = test::micro_config().vit;
  const Tensor<double> tokens = randn({2, 4, 48}, 13);
  const Tensor<double> probe = randn({2, 4, 16}, 14);
  auto loss = [&](const Tensor<double>& weight) {
    EncoderWeights<double> v = w;
    v.patch_embed.weight = weight;
    return sum(mul(vit::encode(tokens, v, cfg), probe));
  };
  CHECK(test::grad_check(loss, w.patch_embed.weight, 1e-5) < 1e-3);
}

TEST_CASE("ViTConfig validation") {
  ViTConfig c;
  c.image_size = 30;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ViTConfig{};
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(ViTConfig{}.validate());
}
