#include <doctest.h>

#include <filesystem>

#include "helpers.hpp"
#include "luvit/run_config.hpp"

using namespace luvit;

namespace {

std::string error_path(const std::string& text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.key_path();
  }
  return "";
}

std::filesystem::path configs_dir() { return std::filesystem::path(LUVIT_SOURCE_DIR) / "configs"; }

}  // namespace

TEST_CASE("defaults") {
  const RunConfig c = parse_run_config("{}");
  CHECK(c.seed == 0);
  CHECK(c.model.variant == Variant::luvit);
  CHECK(c.model.vit.image_size == c.data.image_size);
  CHECK(c.model.num_classes == c.data.classes);
  CHECK(c.pretrain.mode == TrainMode::pretrain);
  CHECK(c.finetune.layer_decay == 0.75);
  CHECK(c.supervised.layer_decay == 1.0);
  CHECK(c.analysis.layer == -1);
  CHECK_NOTHROW(c.check_data_compatible());
}

TEST_CASE("values are read into every section") {
  const RunConfig c = parse_run_config(R"({
    // comments are allowed
    "seed": 7, "out": "runs/x",
    "model": {"variant": "vit", "depth": 2, "llm": {"init": "random-baseline"}, "lora": {"rank": 2, "targets": ["value"]}},
    "train": {"finetune": {"epochs": 3, "betas": [0.8, 0.99], "init_checkpoint": "a.luvt"}},
    "data": {"dir": "d", "n_per_class": 5},
    "analysis": {"layer": 1, "grid": 11}
  })");
  CHECK(c.seed == 7);
  CHECK(c.pretrain.seed == 7);
  CHECK(c.supervised.seed == 7);
  CHECK(c.out == "runs/x");
  CHECK(c.model.variant == Variant::vit);
  CHECK(c.model.vit.depth == 2);
  CHECK(c.model.llm.init_mode == LLMInit::random_baseline);
  CHECK(c.model.lora.rank == 2);
  CHECK(c.model.lora.targets == std::vector<LoRATarget>{LoRATarget::value});
  CHECK(c.finetune.epochs == 3);
  CHECK(c.finetune.beta1 == 0.8);
  CHECK(c.finetune.beta2 == 0.99);
  CHECK(c.finetune.init_checkpoint == "a.luvt");
  CHECK(c.data_dir == "d");
  CHECK(c.data.n_per_class == 5);
  CHECK(c.analysis.layer == 1);
  CHECK(c.analysis.grid == 11);
  CHECK(&c.train(TrainMode::finetune) == &c.finetune);
}

TEST_CASE("errors name the offending key") {
  CHECK(error_path(R"({"model": {"depht": 2}})") == "model.depht");
  CHECK(error_path(R"({"train": {"pretrain": {"epochs": "ten"}}})") == "train.pretrain.epochs");
  CHECK(error_path(R"({"train": {"finetune": {"betas": [0.9]}}})") == "train.finetune.betas");
  CHECK(error_path(R"({"train": {"finetune": {"epochs": 2, "warmup_epochs": 3}}})") == "train.finetune.warmup_epochs");
  CHECK(error_path(R"({"model": {"lora": {"targets": ["q"]}}})") == "model.lora.targets");
  CHECK(error_path(R"({"model": {"llm": {"init": "nope"}}})") == "model.llm.init");
  CHECK(error_path(R"({"model": {"preset": "huge"}})") == "model.preset");
  CHECK(error_path(R"({"analysis": {"calibration_fraction": 1.0}})") == "analysis.calibration_fraction");
  CHECK(error_path(R"({"data": []})") == "data");
  CHECK(error_path(R"({"seed": -1})") == "seed");
  CHECK(error_path(R"({"bogus": 1})") == "bogus");
  CHECK(error_path("{") == "<document>");
  CHECK_THROWS_AS(load_run_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("data compatibility is checked separately") {
  const RunConfig c = parse_run_config(R"({"data": {"image_size": 16}})");
  try {
    c.check_data_compatible();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key_path() == "data.image_size");
  }
  const RunConfig k = parse_run_config(R"({"data": {"classes": 4}})");
  CHECK_THROWS_AS(k.check_data_compatible(), ConfigError);
}

TEST_CASE("dump and parse round-trip") {
  for (const char* text : {"{}", R"({"seed": 3, "model": {"preset": "full", "variant": "vit-mlp-l"}})",
                           R"({"model": {"variant": "vit-llama", "llm": {"causal": true, "rope": true}}})"}) {
    const RunConfig a = parse_run_config(text);
    const std::string dumped = dump_run_config(a);
    const RunConfig b = parse_run_config(dumped);
    CHECK(dump_run_config(b) == dumped);
    CHECK(count_params(param_specs(a.model, Stage::classify)).trainable_total ==
          count_params(param_specs(b.model, Stage::classify)).trainable_total);
  }
}

TEST_CASE("shipped configs") {
  const RunConfig toy = load_run_config(configs_dir() / "toy.json");
  CHECK_NOTHROW(toy.check_data_compatible());
  CHECK(toy.model.vit.image_size == 32);
  const RunConfig full = load_run_config(configs_dir() / "fullscale.json");
  CHECK(full.model.vit.image_size == 224);
  CHECK(count_params(param_specs(full.model, Stage::classify)).trainable_total == 93'126'120);
  CHECK(full.pretrain.batch_size == 4096);
  CHECK(full.pretrain.epochs == 800);
}
