#include "luvit/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

namespace luvit {

namespace {

constexpr std::uint64_t kEpochTag = hash_string("epoch-order");
constexpr std::uint64_t kMaskTag = hash_string("mask");
constexpr std::uint64_t kEvalMaskTag = hash_string("eval-mask");

}  // namespace

template <typename S>
PatchCache<S>::PatchCache(const ImageSet& set, Index patch_size) {
  rows_.reserve(set.images.size());
  for (const Tensor<float>& img : set.images) {
    const PatchSequence<float> seq = vit::patchify(img, patch_size);
    if (rows_.empty()) {
      tokens_ = seq.tokens.dim(0);
      patch_dim_ = seq.tokens.dim(1);
    } else if (seq.tokens.dim(0) != tokens_ || seq.tokens.dim(1) != patch_dim_) {
      throw ShapeError("PatchCache: images differ in size");
    }
    rows_.push_back(seq.tokens.value().template cast<S>());
  }
}

template <typename S>
Tensor<S> PatchCache<S>::batch(const std::vector<Index>& ids) const {
  if (ids.empty()) throw ShapeError("PatchCache: empty batch");
  const Index stride = tokens_ * patch_dim_;
  Buffer<S> out(static_cast<Index>(ids.size()) * stride);
  for (std::size_t i = 0; i < ids.size(); ++i) out.segment(static_cast<Index>(i) * stride, stride) = rows_.at(ids[i]);
  return Tensor<S>({static_cast<Index>(ids.size()), tokens_, patch_dim_}, std::move(out));
}

std::string format_metric(const MetricRecord& r) {
  char value[64];
  std::snprintf(value, sizeof value, "%.9g", r.value);
  return std::to_string(r.step) + "," + std::to_string(r.epoch) + "," + r.split + "," + r.metric + "," + value;
}

MetricsCsv::MetricsCsv(const std::filesystem::path& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  if (fresh) out_ << kMetricsHeader << '\n';
}

void MetricsCsv::write(const MetricRecord& r) {
  out_ << format_metric(r) << '\n';
  out_.flush();
}

template <typename S>
EvalResult evaluate_classifier(const Model<S>& model, const PatchCache<S>& data, const std::vector<int>& labels,
                               Index batch_size, double label_smoothing) {
  if (static_cast<Index>(labels.size()) != data.size()) throw ShapeError("evaluate_classifier: label count mismatch");
  EvalResult r;
  double loss_sum = 0.0;
  Index correct = 0;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    std::vector<Index> ids(static_cast<std::size_t>(end - start));
    std::iota(ids.begin(), ids.end(), start);
    std::vector<int> y(labels.begin() + start, labels.begin() + end);
    const Tensor<S> logits = classify_forward(model, data.batch(ids));
    loss_sum += static_cast<double>(cross_entropy_with_label_smoothing(logits, y, label_smoothing).item()) *
                static_cast<double>(y.size());
    const auto m = logits.matrix();
    for (Index i = 0; i < m.rows(); ++i) {
      Index best = 0;
      m.row(i).maxCoeff(&best);
      r.predictions.push_back(static_cast<int>(best));
      if (best == y[static_cast<std::size_t>(i)]) ++correct;
    }
  }
  r.count = data.size();
  r.loss = loss_sum / static_cast<double>(r.count);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.count);
  return r;
}

template <typename S>
double evaluate_mae(const Model<S>& model, const PatchCache<S>& data, Index batch_size, double mask_ratio,
                    std::uint64_t seed) {
  double loss_sum = 0.0;
  for (Index start = 0; start < data.size(); start += batch_size) {
    const Index end = std::min(data.size(), start + batch_size);
    std::vector<Index> ids(static_cast<std::size_t>(end - start));
    std::iota(ids.begin(), ids.end(), start);
    const Tensor<S> patches = data.batch(ids);
    std::vector<MaskSpec> masks;
    for (Index i : ids) {
      Rng rng(derive_seed(seed, {static_cast<std::uint64_t>(i)}));
      masks.push_back(mae::random_masking(patches.dim(1), mask_ratio, rng));
    }
    loss_sum += static_cast<double>(pretrain_forward(model, patches, masks).loss.item()) * static_cast<double>(ids.size());
  }
  return loss_sum / static_cast<double>(data.size());
}

template <typename S>
Trainer<S>::Trainer(const TrainConfig& cfg, const ModelConfig& model_cfg, const ImageSet& train, const ImageSet* eval,
                    std::string config_text)
    : cfg_(cfg),
      model_(model_cfg, cfg.mode == TrainMode::pretrain ? Stage::pretrain : Stage::classify, cfg.seed),
      optimizer_(AdamWHyper{cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay}, cfg.layer_decay,
                 static_cast<int>(model_cfg.vit.depth)),
      train_(train, model_cfg.vit.patch_size),
      train_labels_(train.labels),
      config_text_(std::move(config_text)) {
  cfg_.validate();
  const bool classify = cfg.mode != TrainMode::pretrain;
  if (train.size() < cfg.batch_size) throw ConfigError("train.batch_size", "larger than the training set");
  if (classify && static_cast<Index>(train.labels.size()) != train.size()) {
    throw ConfigError("data", "classification training requires one label per image");
  }
  if (eval != nullptr && eval->size() > 0) {
    if (classify && static_cast<Index>(eval->labels.size()) != eval->size()) {
      throw ConfigError("data", "evaluation split requires one label per image");
    }
    eval_.emplace(*eval, model_cfg.vit.patch_size);
    eval_labels_ = eval->labels;
  }
  steps_per_epoch_ = train.size() / cfg.batch_size;
  initialised_ = cfg.mode != TrainMode::finetune;
}

template <typename S>
LoadSummary Trainer<S>::init_from(const Checkpoint& pretrained) {
  LoadSummary s = model_.load_weights(pretrained, false);
  initialised_ = true;
  return s;
}

template <typename S>
void Trainer<S>::resume(const Checkpoint& ckpt) {
  model_.load_weights(ckpt, true);
  optimizer_.load(ckpt, model_.params(), ckpt.step);
  step_ = static_cast<Index>(ckpt.step);
  if (step_ > total_steps()) throw LoadError("checkpoint step exceeds the configured run length");
  initialised_ = true;
}

template <typename S>
std::vector<Index> Trainer<S>::epoch_order(Index epoch) const {
  std::vector<Index> order(static_cast<std::size_t>(train_.size()));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(derive_seed(cfg_.seed, {kEpochTag, static_cast<std::uint64_t>(epoch)}));
  shuffle_range(order.begin(), order.end(), rng);
  return order;
}

template <typename S>
Tensor<S> Trainer<S>::step_loss(const std::vector<Index>& ids, Index step) {
  const Tensor<S> patches = train_.batch(ids);
  if (cfg_.mode == TrainMode::pretrain) {
    Rng rng(derive_seed(cfg_.seed, {kMaskTag, static_cast<std::uint64_t>(step)}));
    return pretrain_forward(model_, patches, cfg_.mask_ratio, rng).loss;
  }
  std::vector<int> y;
  y.reserve(ids.size());
  for (Index i : ids) y.push_back(train_labels_[static_cast<std::size_t>(i)]);
  return cross_entropy_with_label_smoothing(classify_forward(model_, patches), y, cfg_.label_smoothing);
}

template <typename S>
std::vector<MetricRecord> Trainer<S>::run(Index until_step, const MetricCallback& sink) {
  if (!initialised_) throw ConfigError("train.init_checkpoint", "finetune mode requires a pre-trained checkpoint");
  const Index total = total_steps();
  const Index stop = until_step < 0 ? total : std::min(until_step, total);
  std::vector<MetricRecord> out;
  auto emit = [&](MetricRecord r) {
    if (sink) sink(r);
    out.push_back(std::move(r));
  };

  std::vector<Index> order;
  Index order_epoch = -1;
  while (step_ < stop) {
    const Index epoch = step_ / steps_per_epoch_;
    const Index pos = step_ % steps_per_epoch_;
    if (epoch != order_epoch) {
      order = epoch_order(epoch);
      order_epoch = epoch;
    }
    const std::vector<Index> ids(order.begin() + pos * cfg_.batch_size, order.begin() + (pos + 1) * cfg_.batch_size);
    const double lr = lr_at(step_, total, cfg_);

    model_.params().clear_grads();
    double loss_value = 0.0;
    {
      Tape<S> tape;
      TapeScope<S> scope(tape);
      const Tensor<S> loss = step_loss(ids, step_);
      loss_value = static_cast<double>(loss.item());
      backward(tape, loss);
    }
    last_update_count_ = optimizer_.step(model_.params(), lr);
    model_.params().clear_grads();
    ++step_;

    const auto step_u = static_cast<std::uint64_t>(step_);
    if (step_ % cfg_.log_every == 0) {
      emit({step_u, epoch, "train", "loss", loss_value});
      emit({step_u, epoch, "train", "lr", lr});
    }
    if (step_ % steps_per_epoch_ == 0 && eval_) {
      const Index eval_batch = std::max<Index>(cfg_.batch_size, 64);
      if (cfg_.mode == TrainMode::pretrain) {
        emit({step_u, epoch, "eval", "loss",
              evaluate_mae(model_, *eval_, eval_batch, cfg_.mask_ratio, derive_seed(cfg_.seed, {kEvalMaskTag}))});
      } else {
        const EvalResult r = evaluate_classifier(model_, *eval_, eval_labels_, eval_batch, cfg_.label_smoothing);
        emit({step_u, epoch, "eval", "loss", r.loss});
        emit({step_u, epoch, "eval", "accuracy", r.accuracy});
      }
    }
  }
  return out;
}

template <typename S>
Checkpoint Trainer<S>::checkpoint() const {
  Checkpoint ckpt = model_.to_checkpoint(static_cast<std::uint64_t>(step_), config_text_);
  optimizer_.save(ckpt);
  return ckpt;
}

#define LUVIT_INSTANTIATE_TRAINER(S)                                                                            \
  template class PatchCache<S>;                                                                                 \
  template EvalResult evaluate_classifier(const Model<S>&, const PatchCache<S>&, const std::vector<int>&, Index, \
                                          double);                                                              \
  template double evaluate_mae(const Model<S>&, const PatchCache<S>&, Index, double, std::uint64_t);            \
  template class Trainer<S>;

LUVIT_INSTANTIATE_TRAINER(float)
LUVIT_INSTANTIATE_TRAINER(double)

}  // namespace luvit
