#pragma once

// Run configuration: a JSON document with sections model / train / data /
// analysis plus `seed` and `out`. Every key is optional (defaults below);
// unknown keys and wrongly typed values raise ConfigError naming the key path.
//
//   {
//     "seed": 0, "out": "runs/toy",
//     "model": {"preset": "desk", "variant": "luvit", "image_size": 32, "patch_size": 4, ...,
//               "llm": {...}, "lora": {...}, "decoder": {...}},
//     "train": {"pretrain": {...}, "finetune": {...}, "supervised": {...}},
//     "data": {"dir": "data", "classes": 9, "n_per_class": 200, ...},
//     "analysis": {"layer": -1, "calibration_fraction": 0.5, "grid": 101, "batch_size": 64}
//   }

#include <cstdint>
#include <filesystem>
#include <string>

#include "luvit/config.hpp"
#include "luvit/optim.hpp"
#include "luvit/synth.hpp"

namespace luvit {

struct AnalysisConfig {
  int layer = -1;  // encoder block whose attention/features are analysed; -1 = last
  double calibration_fraction = 0.5;
  Index grid = 101;
  Index batch_size = 64;

  void validate() const;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  ModelConfig model = desk_config(Variant::luvit);
  TrainConfig pretrain;
  TrainConfig finetune;
  TrainConfig supervised;
  SynthConfig data;
  std::string data_dir = "data";
  AnalysisConfig analysis;

  RunConfig();

  const TrainConfig& train(TrainMode mode) const;
  TrainConfig& train(TrainMode mode);
  /// Copies `seed` into every training section.
  void set_seed(std::uint64_t s);
  void validate() const;
  /// Data and model must agree on image size and class count (only needed by commands that touch data).
  void check_data_compatible() const;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Fully resolved configuration (every key, defaults filled in) as indented JSON.
std::string dump_run_config(const RunConfig& cfg);

}  // namespace luvit
