#pragma once

// Synthetic stand-in for a labelled natural-image dataset with exact
// foreground masks. Class = sprite shape; backgrounds are procedural textures
// whose id agrees with the class with probability `background_bias`.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "luvit/checkpoint.hpp"
#include "luvit/trainer.hpp"

namespace luvit {

inline constexpr int kNumShapes = 9;
inline constexpr int kNumTextures = 9;

struct SpriteParams {
  int shape = 0;
  double cx = 0.0, cy = 0.0;  // pixel units
  double radius = 1.0;
  double angle = 0.0;  // radians
  std::array<float, 3> color{};
};

struct BackgroundParams {
  int texture = 0;
  double frequency = 1.0;
  double phase = 0.0;
  std::array<float, 3> color_a{};
  std::array<float, 3> color_b{};
};

struct SyntheticSample {
  Tensor<float> image;  // [H x W x 3] in [0, 1]
  int label = 0;
  std::vector<std::uint8_t> fg_mask;  // H * W, row-major, 1 = foreground
  int background_id = 0;
  SpriteParams sprite;
  BackgroundParams background;

  Index height() const { return image.dim(0); }
  Index width() const { return image.dim(1); }
};

struct SynthConfig {
  Index n_per_class = 200;
  Index n_eval_per_class = 50;
  int classes = 9;
  Index image_size = 32;
  double background_bias = 0.8;

  void validate() const;
};

/// True when the local point (u, v), in units of the sprite radius, lies inside `shape`.
bool sprite_contains(int shape, double u, double v);

std::vector<std::uint8_t> render_sprite_mask(const SpriteParams& s, Index height, Index width);
/// [H x W x 3] texture image.
Tensor<float> render_background(const BackgroundParams& b, Index height, Index width);
/// Background with the sprite colour written over its mask.
Tensor<float> composite(const Tensor<float>& background, const std::vector<std::uint8_t>& mask,
                        const std::array<float, 3>& color);

/// Samples ordered by index then class; every class gets exactly n_per_class samples.
std::vector<SyntheticSample> gen_dataset(Index n_per_class, int classes, Index image_size, std::uint64_t seed,
                                         double background_bias = 0.8);

enum class SwapMode { same_class, random_class };

/// Keeps pixels under sample.fg_mask and takes every other pixel from the donor's background.
/// same_class requires donor.label == sample.label (ContractError otherwise).
SyntheticSample swap_background(const SyntheticSample& sample, const SyntheticSample& donor, SwapMode mode);

struct RobustnessSplits {
  std::vector<SyntheticSample> original;
  std::vector<SyntheticSample> mixed_same;
  std::vector<SyntheticSample> mixed_random;
};

/// Label-aligned splits: mixed_same takes a random donor of the same class; mixed_random draws a
/// uniformly random class, then a random donor from it.
RobustnessSplits make_robustness_splits(const std::vector<SyntheticSample>& samples, int classes, std::uint64_t seed);

/// The splits every run uses, with seeds derived from the run seed: train (n_per_class per class),
/// eval (n_eval_per_class per class), and the robustness splits built from eval.
std::vector<SyntheticSample> make_train_split(const SynthConfig& cfg, std::uint64_t seed);
std::vector<SyntheticSample> make_eval_split(const SynthConfig& cfg, std::uint64_t seed);
RobustnessSplits make_eval_robustness_splits(const std::vector<SyntheticSample>& eval, const SynthConfig& cfg,
                                             std::uint64_t seed);

ImageSet to_image_set(const std::vector<SyntheticSample>& samples);

/// One split as a tensor dump (images, labels, fg_masks, background_ids, sprite/background params)
/// next to a manifest CSV `id,label,background_id`.
void save_split(const std::vector<SyntheticSample>& samples, const std::filesystem::path& dump,
                const std::filesystem::path& manifest);
std::vector<SyntheticSample> load_split(const std::filesystem::path& dump);

}  // namespace luvit
