#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "luvit/checkpoint.hpp"
#include "luvit/params.hpp"

namespace luvit {

enum class TrainMode { pretrain, finetune, supervised };

std::string to_string(TrainMode m);
TrainMode train_mode_from_string(const std::string& s);

struct TrainConfig {
  TrainMode mode = TrainMode::pretrain;
  Index epochs = 10;
  Index batch_size = 32;
  double base_lr = 1.5e-4;  // scaled by batch_size / 256
  double warmup_epochs = 1.0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double adam_eps = 1e-8;
  double layer_decay = 1.0;
  double label_smoothing = 0.0;
  double mask_ratio = 0.75;
  std::uint64_t seed = 0;
  Index log_every = 1;
  std::string init_checkpoint;

  double peak_lr() const { return base_lr * static_cast<double>(batch_size) / 256.0; }
  void validate() const;
};

/// MAE-style pre-training recipe: base lr 1.5e-4, AdamW(0.9, 0.95), wd 0.05, 40/800 warm-up epochs.
TrainConfig pretrain_recipe();
/// End-to-end fine-tuning recipe: base lr 1e-3, AdamW(0.9, 0.999), wd 0.05, 5 warm-up epochs,
/// layer decay 0.75, label smoothing 0.1.
TrainConfig finetune_recipe();

/// Linear warm-up from 0 to the peak lr, then half-cosine decay to 0 at total_steps.
/// The warm-up span is warmup_epochs / epochs of total_steps.
double lr_at(Index step, Index total_steps, const TrainConfig& cfg);

/// decay^(num_layers + 1 - layer_index): patch embedding at 0, encoder block i at i + 1,
/// everything after the encoder at num_layers + 1.
double layer_decay_multiplier(int layer_index, int num_layers, double decay);

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

template <typename S>
struct AdamMoments {
  Buffer<S> m;
  Buffer<S> v;
};

/// One decoupled-decay AdamW update at 1-based step t, computed in double precision:
///   p <- p (1 - lr wd) - lr m_hat / (sqrt(v_hat) + eps)
template <typename S>
void adamw_step(Buffer<S>& param, const Buffer<S>& grad, AdamMoments<S>& moments, double lr, std::uint64_t t,
                const AdamWHyper& h);

/// AdamW over a ParamStore with per-parameter lr multipliers (layer decay) and decay masks.
/// Frozen parameters (requires_grad == false) and parameters without a gradient are skipped.
template <typename S>
class AdamW {
 public:
  AdamW(const AdamWHyper& hyper, double layer_decay, int num_layers) : hyper_(hyper), layer_decay_(layer_decay), num_layers_(num_layers) {}

  /// Applies one update at learning rate `lr`; returns the number of scalar entries updated.
  Index step(ParamStore<S>& params, double lr);

  std::uint64_t steps_taken() const { return t_; }

  void save(Checkpoint& ckpt) const;
  /// Restores moments and the step counter written by save().
  void load(const Checkpoint& ckpt, const ParamStore<S>& params, std::uint64_t steps_taken);

 private:
  AdamWHyper hyper_;
  double layer_decay_;
  int num_layers_;
  std::uint64_t t_ = 0;
  std::map<std::string, AdamMoments<S>> moments_;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace luvit
