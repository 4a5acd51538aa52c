#include "luvit/optim.hpp"

#include <cmath>
#include <numbers>

namespace luvit {

std::string to_string(TrainMode m) {
  switch (m) {
    case TrainMode::pretrain: return "pretrain";
    case TrainMode::finetune: return "finetune";
    case TrainMode::supervised: return "supervised-only";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "supervised") return TrainMode::supervised;
  for (TrainMode m : {TrainMode::pretrain, TrainMode::finetune, TrainMode::supervised}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("train.mode", "unknown mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs", "must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be at least 1");
  if (!(warmup_epochs >= 0.0 && warmup_epochs < static_cast<double>(epochs))) {
    throw ConfigError("train.warmup_epochs", "must lie in [0, epochs)");
  }
  if (!(layer_decay > 0.0 && layer_decay <= 1.0)) throw ConfigError("train.layer_decay", "must lie in (0, 1]");
  if (!(base_lr > 0.0)) throw ConfigError("train.base_lr", "must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay", "must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.betas", "beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.betas", "beta2 must lie in [0, 1)");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) throw ConfigError("train.label_smoothing", "must lie in [0, 1)");
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("train.mask_ratio", "must lie in [0, 1)");
  if (log_every < 1) throw ConfigError("train.log_every", "must be at least 1");
}

TrainConfig pretrain_recipe() {
  TrainConfig c;
  c.mode = TrainMode::pretrain;
  c.epochs = 800;
  c.batch_size = 4096;
  c.base_lr = 1.5e-4;
  c.warmup_epochs = 40;
  c.weight_decay = 0.05;
  c.beta1 = 0.9;
  c.beta2 = 0.95;
  c.mask_ratio = 0.75;
  return c;
}

TrainConfig finetune_recipe() {
  TrainConfig c;
  c.mode = TrainMode::finetune;
  c.epochs = 100;
  c.batch_size = 1024;
  c.base_lr = 1e-3;
  c.warmup_epochs = 5;
  c.weight_decay = 0.05;
  c.beta1 = 0.9;
  c.beta2 = 0.999;
  c.layer_decay = 0.75;
  c.label_smoothing = 0.1;
  return c;
}

double lr_at(Index step, Index total_steps, const TrainConfig& cfg) {
  if (total_steps < 1 || step < 0 || step > total_steps) throw ContractError("lr_at: step outside [0, total_steps]");
  const double warmup = cfg.warmup_epochs / static_cast<double>(cfg.epochs) * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  const double peak = cfg.peak_lr();
  if (s < warmup) return peak * s / warmup;
  const double span = static_cast<double>(total_steps) - warmup;
  if (span <= 0.0) return 0.0;
  return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * (s - warmup) / span));
}

double layer_decay_multiplier(int layer_index, int num_layers, double decay) {
  if (layer_index < 0 || layer_index > num_layers + 1) throw ContractError("layer_decay_multiplier: layer index out of range");
  return std::pow(decay, num_layers + 1 - layer_index);
}

template <typename S>
void adamw_step(Buffer<S>& param, const Buffer<S>& grad, AdamMoments<S>& moments, double lr, std::uint64_t t,
                const AdamWHyper& h) {
  if (t < 1) throw ContractError("adamw_step: step counter starts at 1");
  if (grad.size() != param.size()) throw ShapeError("adamw_step: grad does not match parameter");
  if (moments.m.size() == 0) {
    moments.m = Buffer<S>::Zero(param.size());
    moments.v = Buffer<S>::Zero(param.size());
  }
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(t));
  const double shrink = 1.0 - lr * h.weight_decay;
  for (Index i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = h.beta1 * static_cast<double>(moments.m[i]) + (1.0 - h.beta1) * g;
    const double v = h.beta2 * static_cast<double>(moments.v[i]) + (1.0 - h.beta2) * g * g;
    moments.m[i] = static_cast<S>(m);
    moments.v[i] = static_cast<S>(v);
    const double update = (m / c1) / (std::sqrt(v / c2) + h.eps);
    param[i] = static_cast<S>(static_cast<double>(param[i]) * shrink - lr * update);
  }
}

template <typename S>
Index AdamW<S>::step(ParamStore<S>& params, double lr) {
  ++t_;
  Index updated = 0;
  for (auto& p : params.entries()) {
    if (!p.tensor.requires_grad() || !p.tensor.has_grad()) continue;
    AdamWHyper h = hyper_;
    if (!p.spec.decay) h.weight_decay = 0.0;
    const double scaled_lr = lr * layer_decay_multiplier(p.spec.layer, num_layers_, layer_decay_);
    adamw_step(p.tensor.mutable_value(), p.tensor.grad(), moments_[p.spec.name], scaled_lr, t_, h);
    updated += p.tensor.numel();
  }
  return updated;
}

template <typename S>
void AdamW<S>::save(Checkpoint& ckpt) const {
  for (const auto& [name, mom] : moments_) {
    if (mom.m.size() == 0) continue;
    const Shape shape{mom.m.size()};
    ckpt.add("optim.m/" + name, Tensor<S>(shape, mom.m), false);
    ckpt.add("optim.v/" + name, Tensor<S>(shape, mom.v), false);
  }
}

template <typename S>
void AdamW<S>::load(const Checkpoint& ckpt, const ParamStore<S>& params, std::uint64_t steps_taken) {
  moments_.clear();
  for (const auto& p : params.entries()) {
    const CheckpointTensor* m = ckpt.find("optim.m/" + p.spec.name);
    const CheckpointTensor* v = ckpt.find("optim.v/" + p.spec.name);
    if (m == nullptr || v == nullptr) continue;
    if (static_cast<Index>(m->data.size()) != p.tensor.numel() || v->data.size() != m->data.size()) {
      throw LoadError("optimizer moments for \"" + p.spec.name + "\" do not match the parameter");
    }
    moments_[p.spec.name] = AdamMoments<S>{to_tensor<S>(*m).value(), to_tensor<S>(*v).value()};
  }
  t_ = steps_taken;
}

template void adamw_step(Buffer<float>&, const Buffer<float>&, AdamMoments<float>&, double, std::uint64_t, const AdamWHyper&);
template void adamw_step(Buffer<double>&, const Buffer<double>&, AdamMoments<double>&, double, std::uint64_t, const AdamWHyper&);
template class AdamW<float>;
template class AdamW<double>;

}  // namespace luvit
