#pragma once

// Attention-entropy statistics, magnitude/frequency pseudo-masks scored by
// IoU, and background-robustness evaluation. All statistics run in double.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "luvit/attention.hpp"
#include "luvit/synth.hpp"
#include "luvit/trainer.hpp"

namespace luvit::analysis {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Binary grid at token resolution, row-major; 1 = foreground.
struct PatchMask {
  Index rows = 0;
  Index cols = 0;
  std::vector<std::uint8_t> cells;

  Index size() const { return rows * cols; }
  Index count() const;
};

/// Post-softmax attention of one image: per layer, one [T x T] matrix per head.
struct AttentionRecord {
  std::map<int, std::vector<Mat>> layers;
  Index grid_rows = 0;
  Index grid_cols = 0;
};

/// Slices image `index` out of a batched recording ([B x H x T x T] per layer).
template <typename S>
AttentionRecord attention_record(const ForwardRecording<S>& rec, Index index, Index grid_rows, Index grid_cols);

/// Features [T x d] of image `index` at `layer` from a batched recording ([B x T x d]).
template <typename S>
Mat recorded_features(const ForwardRecording<S>& rec, int layer, Index index);

/// Natural-log entropy of each row; 0 log 0 := 0. ValidationError when a row sum is off by more than 1e-3.
Vec attention_entropy(const Mat& a);

/// Per-token mean over heads of attention_entropy at `layer`.
Vec head_mean_entropy(const AttentionRecord& record, int layer);

struct RegionMeans {
  std::optional<double> fg;
  std::optional<double> bg;
};

/// Means over foreground and background tokens; a mean is absent when its region is empty.
RegionMeans fg_bg_means(const Vec& entropy, const PatchMask& mask);

/// A patch cell is 1 iff any covered pixel is 1.
PatchMask downsample_mask(const std::vector<std::uint8_t>& highres, Index height, Index width, Index patch_size);

/// (v - min) / (max - min); a constant map becomes all zeros.
Vec per_image_normalize(const Vec& map);

/// Per-token L2 norm after centering each feature dimension over tokens.
Vec magnitude_component(const Mat& features);

/// Per token: FFT along the feature axis, per-bin phase minus the mean phase over tokens
/// (wrapped to (-pi, pi]), then the L2 norm over bins.
Vec frequency_component(const Mat& features);

/// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

PatchMask threshold_mask(const Vec& scores, double tau, Index rows, Index cols);

/// |pred and gt| / |pred or gt|; two empty masks score 1.
double mask_iou(const PatchMask& pred, const PatchMask& gt);

struct SweepPoint {
  double tau = 0.0;  // IoU holds for thresholds in (previous tau, tau]
  double iou = 0.0;
};

/// IoU of threshold_mask(scores, tau) as a step function of tau: one point per distinct score
/// (ascending), plus the value above the largest score.
std::vector<SweepPoint> iou_sweep(const Vec& scores, const PatchMask& gt);

double mean_iou(const std::vector<Vec>& scores, const std::vector<PatchMask>& gts, double tau);

struct Calibration {
  double tau = 0.0;
  double mean_iou = 0.0;
};

/// Picks the threshold on per-image-normalized scores maximizing mean IoU over a grid of
/// `grid` evenly spaced values in [0, 1]; ties keep the smallest threshold.
Calibration calibrate_threshold(const std::vector<Vec>& normalized_scores, const std::vector<PatchMask>& gts,
                                Index grid = 101);

struct RobustnessTable {
  double original = 0.0;
  double mixed_same = 0.0;
  double mixed_random = 0.0;
  Index count = 0;

  double orig_minus_same() const { return original - mixed_same; }
  double orig_minus_rand() const { return original - mixed_random; }
  double same_minus_rand() const { return mixed_same - mixed_random; }
};

/// Top-1 accuracy on each split plus the pairwise gaps. Splits must be label-aligned.
template <typename S>
RobustnessTable robustness_eval(const Model<S>& model, const ImageSet& original, const ImageSet& mixed_same,
                                const ImageSet& mixed_random, Index batch_size = 64);

/// Encoder block analysed when the configured layer is -1: the last one.
int resolve_layer(int layer, const ModelConfig& cfg);

struct EntropyReport {
  int layer = 0;
  std::vector<RegionMeans> images;  // per-image fg/bg mean of the head-averaged entropy
  std::vector<Vec> maps;            // per-patch head-averaged entropy
  double mean_fg = 0.0;             // over images that have the region
  double mean_bg = 0.0;
  Index fg_below_bg = 0;            // images with fg mean < bg mean
  Index compared = 0;               // images with both regions present
};

template <typename S>
EntropyReport entropy_report(const Model<S>& model, const std::vector<SyntheticSample>& samples, int layer,
                             Index batch_size = 64);

struct IouReport {
  int layer = 0;
  Calibration magnitude;  // tau chosen on the calibration slice, with its calibration mean IoU
  Calibration frequency;
  double magnitude_test = 0.0;  // mean IoU on the remaining images at the frozen tau
  double frequency_test = 0.0;
  Index calibration_images = 0;
  Index test_images = 0;
};

/// Pseudo-masks from the features of `layer`: the first `calibration_fraction` of the samples
/// pick each component's threshold, the rest report IoU against the downsampled ground truth.
template <typename S>
IouReport iou_report(const Model<S>& model, const std::vector<SyntheticSample>& samples, int layer,
                     double calibration_fraction, Index grid = 101, Index batch_size = 64);

inline constexpr const char* kScatterHeader = "image_id,fg_mean,bg_mean";
inline constexpr const char* kIouHeader = "component,tau,mean_iou,images";
inline constexpr const char* kRobustnessHeader = "model,original,mixed_same,mixed_random,orig_minus_same,orig_minus_rand,same_minus_rand";

void write_scatter_csv(const std::filesystem::path& path, const std::vector<RegionMeans>& rows);
/// Rows `<component>.calibration` and `<component>.test` for magnitude and frequency.
void write_iou_csv(const std::filesystem::path& path, const IouReport& r);
void write_robustness_csv(const std::filesystem::path& path, const std::vector<std::pair<std::string, RobustnessTable>>& rows);

}  // namespace luvit::analysis
