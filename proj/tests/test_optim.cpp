#include <doctest.h>

#include <cmath>
#include <map>

#include "helpers.hpp"
#include "luvit/model.hpp"
#include "luvit/optim.hpp"

using namespace luvit;
using test::randn;

TEST_CASE("lr_at") {
  TrainConfig c;
  c.epochs = 10;
  c.warmup_epochs = 2;
  c.batch_size = 256;
  c.base_lr = 1e-3;
  const Index total = 1000;
  CHECK(lr_at(0, total, c) == 0.0);
  CHECK(lr_at(100, total, c) == doctest::Approx(5e-4));
  CHECK(lr_at(200, total, c) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(600, total, c) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(std::abs(lr_at(total, total, c)) < 1e-18);
  for (Index s = 201; s < total; ++s) CHECK(lr_at(s, total, c) <= lr_at(s - 1, total, c));

  c.batch_size = 64;
  CHECK(c.peak_lr() == doctest::Approx(2.5e-4));
  CHECK(lr_at(200, total, c) == doctest::Approx(2.5e-4).epsilon(1e-12));
  c.warmup_epochs = 0;
  CHECK(lr_at(0, total, c) == doctest::Approx(2.5e-4));
}

TEST_CASE("layer_decay_multiplier") {
  CHECK(layer_decay_multiplier(13, 12, 0.75) == 1.0);
  CHECK(layer_decay_multiplier(12, 12, 0.75) == doctest::Approx(0.75));
  CHECK(layer_decay_multiplier(0, 12, 0.75) == doctest::Approx(std::pow(0.75, 13)));
  CHECK(layer_decay_multiplier(5, 12, 1.0) == 1.0);
}

TEST_CASE("adamw_step") {
  const AdamWHyper h{0.9, 0.95, 1e-8, 0.05};
  SUBCASE("zero gradient only applies decoupled decay") {
    Buffer<double> p = randn({6}, 1).value();
    const Buffer<double> before = p;
    AdamMoments<double> m{Buffer<double>::Zero(6), Buffer<double>::Zero(6)};
    const Buffer<double> g = Buffer<double>::Zero(6);
    adamw_step(p, g, m, 0.1, 1, h);
    for (Index i = 0; i < 6; ++i) CHECK(p[i] == before[i] * (1.0 - 0.1 * 0.05));
  }
  SUBCASE("first step matches the reference formula") {
    Buffer<double> p = randn({6}, 2).value();
    const Buffer<double> before = p, g = randn({6}, 3).value();
    AdamMoments<double> m{Buffer<double>::Zero(6), Buffer<double>::Zero(6)};
    const double lr = 1e-3;
    adamw_step(p, g, m, lr, 1, h);
    for (Index i = 0; i < 6; ++i) {
      const double mhat = (1 - h.beta1) * g[i] / (1 - h.beta1);
      const double vhat = (1 - h.beta2) * g[i] * g[i] / (1 - h.beta2);
      const double expect = before[i] * (1 - lr * h.weight_decay) - lr * mhat / (std::sqrt(vhat) + h.eps);
      CHECK(std::abs(p[i] - expect) < 1e-7);
      CHECK(std::abs(p[i] - before[i] * (1 - lr * h.weight_decay) + lr * g[i] / (std::abs(g[i]) + h.eps)) < 1e-7);
    }
  }
  SUBCASE("later steps use bias-corrected moments") {
    Buffer<double> p = Buffer<double>::Constant(1, 1.0);
    AdamMoments<double> m{Buffer<double>::Zero(1), Buffer<double>::Zero(1)};
    const AdamWHyper nd{0.9, 0.999, 1e-8, 0.0};
    const double g1 = 0.5, g2 = -0.25, lr = 0.01;
    const Buffer<double> b1 = Buffer<double>::Constant(1, g1), b2 = Buffer<double>::Constant(1, g2);
    adamw_step(p, b1, m, lr, 1, nd);
    const double p1 = p[0];
    adamw_step(p, b2, m, lr, 2, nd);
    const double mm = 0.9 * 0.1 * g1 + 0.1 * g2, vv = 0.999 * 0.001 * g1 * g1 + 0.001 * g2 * g2;
    const double expect = p1 - lr * (mm / (1 - 0.81)) / (std::sqrt(vv / (1 - 0.999 * 0.999)) + 1e-8);
    CHECK(p[0] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("AdamW over a parameter store") {
  Model<float> model(test::micro_config(), Stage::pretrain, 1);
  ParamStore<float>& store = model.params();
  std::vector<Buffer<float>> before;
  std::map<std::string, float> first;
  for (auto& p : store.entries()) {
    before.push_back(p.tensor.value());
    first[p.spec.name] = p.tensor[0];
    if (p.tensor.requires_grad()) p.tensor.node()->grad_slot().setConstant(0.1f);
  }
  // A parameter without a gradient is skipped.
  store.get("dec.mask_token").clear_grad();
  AdamW<float> opt(AdamWHyper{0.9, 0.95, 1e-8, 0.05}, 0.75, 1);
  const Index updated = opt.step(store, 1e-2);
  CHECK(opt.steps_taken() == 1);
  Index expect = 0;
  for (std::size_t i = 0; i < store.entries().size(); ++i) {
    const auto& p = store.entries()[i];
    const bool changed = !test::bit_equal(p.tensor.value(), before[i]);
    if (!p.tensor.requires_grad() || p.spec.name == "dec.mask_token") {
      CHECK_MESSAGE(!changed, p.spec.name);
    } else {
      CHECK_MESSAGE(changed, p.spec.name);
      expect += p.tensor.numel();
    }
  }
  CHECK(updated == expect);

  // Layer decay: the patch embedding (layer 0) moves 0.75^2 as far as the head-side layers on step 1.
  const float pe = store.get("enc.patch_embed.bias")[0];
  const float top = store.get("fuse.proj_in.bias")[0];
  CHECK(first["enc.patch_embed.bias"] - pe == doctest::Approx(0.5625 * 1e-2).epsilon(1e-4));
  CHECK(first["fuse.proj_in.bias"] - top == doctest::Approx(1e-2).epsilon(1e-4));

  Checkpoint ck;
  opt.save(ck);
  CHECK(ck.find("optim.m/enc.patch_embed.weight") != nullptr);
  CHECK(ck.find("optim.v/fuse.lora_q.A") != nullptr);
  CHECK(ck.find("optim.m/fuse.block.attn.wq") == nullptr);
  AdamW<float> restored(AdamWHyper{0.9, 0.95, 1e-8, 0.05}, 0.75, 1);
  restored.load(ck, store, 1);
  CHECK(restored.steps_taken() == 1);
}

TEST_CASE("TrainConfig validation and recipes") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.warmup_epochs = 10;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.layer_decay = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  try {
    c.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key_path() == "train.betas");
  }

  const TrainConfig p = pretrain_recipe(), f = finetune_recipe();
  CHECK(p.base_lr == 1.5e-4);
  CHECK(p.beta2 == 0.95);
  CHECK(p.mask_ratio == 0.75);
  CHECK(p.warmup_epochs == 40);
  CHECK(f.beta2 == 0.999);
  CHECK(f.layer_decay == 0.75);
  CHECK(f.label_smoothing == 0.1);
  CHECK(to_string(TrainMode::supervised) == "supervised-only");
  CHECK(train_mode_from_string("finetune") == TrainMode::finetune);
}
