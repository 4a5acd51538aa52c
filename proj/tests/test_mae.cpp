#include <doctest.h>

#include <numeric>

#include "helpers.hpp"
#include "luvit/mae.hpp"
#include "luvit/pipeline.hpp"

using namespace luvit;
using test::randn;

TEST_CASE("random_masking") {
  Rng rng(1);
  const MaskSpec m = mae::random_masking(196, 0.75, rng);
  CHECK(m.n_visible == 49);
  CHECK(std::accumulate(m.mask.begin(), m.mask.end(), 0.0) == 147.0);
  for (Index i = 0; i < 196; ++i) CHECK(m.perm[static_cast<std::size_t>(m.ids_restore[static_cast<std::size_t>(i)])] == i);
  for (Index v : m.visible()) CHECK(m.mask[static_cast<std::size_t>(v)] == 0.0f);

  const MaskSpec all = mae::random_masking(16, 0.0, rng);
  CHECK(all.n_visible == 16);
  for (Index i = 0; i < 16; ++i) CHECK(all.ids_restore[static_cast<std::size_t>(all.perm[static_cast<std::size_t>(i)])] == i);

  CHECK(mae::visible_count(4, 0.99) == 1);
  CHECK(mae::visible_count(196, 0.75) == 49);

  Rng a(42), b(42);
  CHECK(mae::random_masking(64, 0.75, a).perm == mae::random_masking(64, 0.75, b).perm);
}

TEST_CASE("shuffle and restore round-trip") {
  Rng rng(2);
  const MaskSpec m = mae::random_masking(9, 0.5, rng);
  const Tensor<float> x = randn<float>({9, 5}, 3);
  const Tensor<float> s = mae::shuffle_tokens(x, m);
  CHECK(s[5] == x[m.perm[1] * 5]);
  CHECK(test::bit_equal(mae::restore_tokens(s, m).value(), x.value()));
}

TEST_CASE("normalized_pixel_target") {
  const Tensor<double> c = mae::normalized_pixel_target(Tensor<double>::filled({1, 6}, 0.7));
  for (Index i = 0; i < 6; ++i) CHECK(std::abs(c[i]) < 1e-9);

  const Tensor<float> x = randn<float>({3, 48}, 4, 2.0);
  const Tensor<float> y = mae::normalized_pixel_target(x);
  for (Index r = 0; r < 3; ++r) {
    double mu = 0.0, var = 0.0;
    for (Index j = 0; j < 48; ++j) mu += x[r * 48 + j];
    mu /= 48.0;
    for (Index j = 0; j < 48; ++j) var += (x[r * 48 + j] - mu) * (x[r * 48 + j] - mu);
    var /= 48.0;
    double ymu = 0.0, yvar = 0.0;
    for (Index j = 0; j < 48; ++j) {
      CHECK(std::abs(y[r * 48 + j] - (x[r * 48 + j] - mu) / std::sqrt(var + 1e-6)) < 1e-6);
      ymu += y[r * 48 + j];
    }
    ymu /= 48.0;
    for (Index j = 0; j < 48; ++j) yvar += (y[r * 48 + j] - ymu) * (y[r * 48 + j] - ymu);
    CHECK(std::abs(ymu) < 1e-6);
    CHECK(yvar / 48.0 == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("mae_loss") {
  const Tensor<double> t = randn({1, 4, 3}, 5);
  const std::vector<float> mask = {1, 0, 1, 0};
  CHECK(mae::mae_loss(t, t, mask).item() == 0.0);

  Tensor<double> p = randn({1, 4, 3}, 6);
  const double base = mae::mae_loss(p, t, mask).item();
  p.mutable_value().segment(3, 3) += 10.0;
  p.mutable_value().segment(9, 3) -= 3.0;
  CHECK(mae::mae_loss(p, t, mask).item() == base);

  const Tensor<double> pred = Tensor<double>::from_vector({2, 2}, {1.0, -1.0, 5.0, 5.0});
  const Tensor<double> target = Tensor<double>::from_vector({2, 2}, {0.0, 0.0, 0.0, 0.0});
  CHECK(mae::mae_loss(pred, target, {1, 0}).item() == 1.0);
  CHECK_THROWS_AS(mae::mae_loss(pred, target, {0, 0}), ContractError);
}

TEST_CASE("sincos decoder table") {
  const Tensor<double> tab = mae::sincos_pos_embed<double>(4, 16);
  CHECK(tab.shape() == Shape{16, 16});
  for (Index i = 0; i < tab.numel(); ++i) CHECK(std::abs(tab[i]) <= 1.0);
  // Tokens of different positions get different codes.
  for (Index a = 0; a < 16; ++a) {
    for (Index b = a + 1; b < 16; ++b) {
      CHECK((tab.value().segment(a * 16, 16) - tab.value().segment(b * 16, 16)).abs().maxCoeff() > 1e-3);
    }
  }
}

TEST_CASE("pretrain_forward") {
  const ModelConfig cfg = test::micro_config();
  const Model<double> model(cfg, Stage::pretrain, 1);
  const Tensor<double> patches = randn({3, 4, 48}, 7);
  Rng rng(8);
  std::vector<MaskSpec> masks;
  for (int i = 0; i < 3; ++i) masks.push_back(mae::random_masking(4, 0.5, rng));
  const PretrainOutput<double> out = pretrain_forward(model, patches, masks);
  CHECK(out.pred.shape() == Shape{3, 4, 48});
  CHECK(out.target.shape() == Shape{3, 4, 48});

  // Predictions at visible positions do not influence the loss.
  std::vector<float> flat;
  for (const auto& m : masks) flat.insert(flat.end(), m.mask.begin(), m.mask.end());
  Tensor<double> pred = out.pred.clone();
  for (Index r = 0; r < 12; ++r) {
    if (flat[static_cast<std::size_t>(r)] == 0.0f) pred.mutable_value().segment(r * 48, 48) += 1.0;
  }
  CHECK(mae::mae_loss(pred, out.target, flat).item() == out.loss.item());

  SUBCASE("untrained loss is close to 1 on unit-variance targets") {
    const Model<float> big(desk_config(Variant::luvit), Stage::pretrain, 2);
    Rng r(9);
    const Tensor<float> x = randn<float>({64, 64, 48}, 10, 0.3);
    const double loss = pretrain_forward(big, x, 0.75, r).loss.item();
    CHECK(loss > 0.8);
    CHECK(loss < 1.2);
  }
}

TEST_CASE("fusion with identity block reduces to proj_out . proj_in") {
  const ModelConfig cfg = test::micro_config();
  Model<double> model(cfg, Stage::pretrain, 3);
  model.params().get("fuse.block.attn.wo").mutable_value().setZero();
  model.params().get("fuse.block.mlp.down").mutable_value().setZero();
  const Tensor<double> patches = randn({2, 4, 48}, 11);
  Rng r1(12);
  const std::vector<MaskSpec> masks = {mae::random_masking(4, 0.5, r1), mae::random_masking(4, 0.5, r1)};
  const double fused = pretrain_forward(model, patches, masks).loss.item();

  // Same pipeline written out with the fusion block replaced by the two projections.
  const FusionWeights<double>& f = *model.fusion();
  const EncoderWeights<double>& enc = model.encoder();
  std::vector<Index> rows, pos;
  for (Index b = 0; b < 2; ++b) {
    for (Index v : masks[static_cast<std::size_t>(b)].visible()) {
      rows.push_back(b * 4 + v);
      pos.push_back(v);
    }
  }
  const Tensor<double> vis = reshape(gather_rows(reshape(patches, {8, 48}), rows), {2, 2, 48});
  Tensor<double> z = vit::encoder_forward(vit::embed(vis, enc, pos), enc, cfg.vit);
  z = linear(linear(z, f.proj_in.weight, f.proj_in.bias), f.proj_out.weight, f.proj_out.bias);
  z = layer_norm(z, enc.norm.weight, enc.norm.bias);
  const Tensor<double> pred = mae::decoder_forward(z, masks, *model.decoder(), cfg.decoder, model.decoder_pos_table());
  std::vector<float> flat;
  for (const auto& m : masks) flat.insert(flat.end(), m.mask.begin(), m.mask.end());
  const Tensor<double> target = reshape(mae::normalized_pixel_target(reshape(patches, {8, 48})), {2, 4, 48});
  CHECK(mae::mae_loss(pred, target, flat).item() == doctest::Approx(fused).epsilon(1e-12));
}
