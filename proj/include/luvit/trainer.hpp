#pragma once

// Training loops for the three modes. Data order and MAE masks come from
// derive_seed(cfg.seed, ...) keyed by epoch/step, so a run resumed from a
// checkpoint replays exactly the same stream as an uninterrupted one.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "luvit/optim.hpp"
#include "luvit/pipeline.hpp"

namespace luvit {

/// Images [H x W x C] in [0, 1] with class labels (labels may be empty for pre-training).
struct ImageSet {
  std::vector<Tensor<float>> images;
  std::vector<int> labels;

  Index size() const { return static_cast<Index>(images.size()); }
};

/// Patchified copy of an ImageSet, assembled into batches on demand.
template <typename S>
class PatchCache {
 public:
  PatchCache(const ImageSet& set, Index patch_size);

  Tensor<S> batch(const std::vector<Index>& ids) const;
  Index size() const { return static_cast<Index>(rows_.size()); }

 private:
  std::vector<Buffer<S>> rows_;
  Index tokens_ = 0;
  Index patch_dim_ = 0;
};

struct MetricRecord {
  std::uint64_t step = 0;
  Index epoch = 0;
  std::string split;
  std::string metric;
  double value = 0.0;
};

inline constexpr const char* kMetricsHeader = "step,epoch,split,metric,value";
std::string format_metric(const MetricRecord& r);

/// Append-only metrics CSV; writes the header when the file is new or empty.
class MetricsCsv {
 public:
  explicit MetricsCsv(const std::filesystem::path& path);
  void write(const MetricRecord& r);

 private:
  std::ofstream out_;
};

using MetricCallback = std::function<void(const MetricRecord&)>;

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Index count = 0;
  std::vector<int> predictions;
};

template <typename S>
EvalResult evaluate_classifier(const Model<S>& model, const PatchCache<S>& data, const std::vector<int>& labels,
                               Index batch_size, double label_smoothing = 0.0);

/// Mean MAE loss with masks fixed by `seed` (one per image index), so repeated evaluations are comparable.
template <typename S>
double evaluate_mae(const Model<S>& model, const PatchCache<S>& data, Index batch_size, double mask_ratio,
                    std::uint64_t seed);

/// Drives one training run. Emits per-step `train` records (loss, lr) every `log_every` steps
/// and per-epoch `eval` records (loss, plus accuracy when classifying) when eval data is given.
template <typename S>
class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const ModelConfig& model_cfg, const ImageSet& train, const ImageSet* eval = nullptr,
          std::string config_text = {});

  /// Fine-tuning initialisation: copies matching tensors (decoder and optimizer state are dropped,
  /// the head keeps its fresh initialisation).
  LoadSummary init_from(const Checkpoint& pretrained);

  /// Restores weights, optimizer moments and the step counter from checkpoint().
  void resume(const Checkpoint& ckpt);

  /// Trains until `until_step` (total_steps() when negative). Returns the records emitted.
  std::vector<MetricRecord> run(Index until_step = -1, const MetricCallback& sink = {});

  Checkpoint checkpoint() const;

  Model<S>& model() { return model_; }
  const Model<S>& model() const { return model_; }
  Index steps_per_epoch() const { return steps_per_epoch_; }
  Index total_steps() const { return steps_per_epoch_ * cfg_.epochs; }
  Index step() const { return step_; }
  /// Scalar entries touched by the most recent optimizer step.
  Index last_update_count() const { return last_update_count_; }

 private:
  std::vector<Index> epoch_order(Index epoch) const;
  Tensor<S> step_loss(const std::vector<Index>& ids, Index step);

  TrainConfig cfg_;
  Model<S> model_;
  AdamW<S> optimizer_;
  PatchCache<S> train_;
  std::vector<int> train_labels_;
  std::optional<PatchCache<S>> eval_;
  std::vector<int> eval_labels_;
  std::string config_text_;
  Index steps_per_epoch_ = 0;
  Index step_ = 0;
  Index last_update_count_ = 0;
  bool initialised_ = false;
};

extern template class Trainer<float>;
extern template class Trainer<double>;

}  // namespace luvit
