#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "caepl/checkpoint.hpp"
#include "caepl/corrupt.hpp"
#include "caepl/dataset.hpp"
#include "caepl/graph.hpp"
#include "caepl/metrics.hpp"
#include "caepl/optim.hpp"

namespace caepl {

struct TrainConfig {
  double lr = 1e-4;
  double momentum = 0.9;  // Nesterov
  int batch_size = 4;
  L2Map l2;
  int max_epochs = 300;
  int patience = 50;  // epochs without improvement before stopping
  enum class Monitor { MinValLoss, MaxValAcc } monitor = Monitor::MinValLoss;
  std::uint64_t seed = 1;
  enum class AeLoss { Bce, Mse } ae_loss = AeLoss::Bce;
  double p_corrupt = 0.5;
  double p_white = 0.5;
  CorruptionGranularity corruption_granularity = CorruptionGranularity::PerElement;
  // Off by default so log CSVs are bitwise reproducible across runs.
  bool log_wall_seconds = false;
  std::string config_hash;

  void validate() const {
    if (lr < 0) throw ConfigError("train: negative learning rate");
    if (momentum < 0 || momentum >= 1) throw ConfigError("train: momentum must be in [0,1)");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    for (const auto& [pattern, lambda] : l2.entries)
      if (lambda < 0) throw ConfigError("train: negative l2 coefficient for '" + pattern + "'");
  }
};

struct EpochRow {
  int epoch = 0;
  double loss = 0, val_loss = 0, acc = 0, val_acc = 0, seconds = 0;
};

struct TrainingLog {
  std::vector<EpochRow> rows;
  int best_epoch = -1;
};

struct TrainResult {
  TrainingLog log;
  Checkpoint best;
  Checkpoint last;
};

using EpochCallback = std::function<void(const EpochRow&)>;

namespace detail {

// Substream tags for the corruption draws.
inline constexpr std::uint64_t kTrainNoiseTag = 0x6E6F697365;  // training presentations
inline constexpr std::uint64_t kValNoiseTag = 0x76616C6E;      // fixed validation corruption

// Corrupts sample `sample_index` of the dataset into slot `slot` of a
// stacked batch. Training draws depend on (seed, epoch, sample); validation
// uses a fixed epoch-independent stream so val_loss stays comparable.
template <typename S>
void corrupt_into_batch(TensorPtr<S>& batch, std::size_t slot, const TensorPtr<S>& clean,
                        const TrainConfig& cfg, std::uint64_t tag, int epoch, int sample_index) {
  const std::int64_t per = clean->size() / clean->shape[0];
  auto single = Tensor<S>::zeros({clean->shape[1], clean->shape[2], clean->shape[3]});
  std::copy_n(clean->values.begin() + static_cast<std::int64_t>(slot) * per, per,
              single->values.begin());
  RngStream rng = RngStream(cfg.seed).derive(tag, static_cast<std::uint64_t>(epoch),
                                             static_cast<std::uint64_t>(sample_index));
  auto corrupted =
      corrupt_salt_pepper(single, cfg.p_corrupt, cfg.p_white, rng, cfg.corruption_granularity);
  std::copy_n(corrupted->values.begin(), per,
              batch->values.begin() + static_cast<std::int64_t>(slot) * per);
}

// Fraction of elements on the same side of 0.5 in prediction and target.
template <typename S>
double binary_accuracy(const TensorPtr<S>& pred, const TensorPtr<S>& target) {
  std::int64_t hits = 0;
  for (std::size_t i = 0; i < pred->values.size(); ++i)
    hits += (pred->values[i] > S(0.5)) == (target->values[i] > S(0.5));
  return static_cast<double>(hits) / static_cast<double>(pred->values.size());
}

inline std::vector<std::vector<int>> sequential_batches(int n, int batch_size) {
  std::vector<std::vector<int>> out;
  for (int start = 0; start < n; start += batch_size) {
    std::vector<int> idx;
    for (int i = start; i < std::min(n, start + batch_size); ++i) idx.push_back(i);
    out.push_back(std::move(idx));
  }
  return out;
}

inline bool improved(TrainConfig::Monitor monitor, double candidate, double best) {
  return monitor == TrainConfig::Monitor::MinValLoss ? candidate < best : candidate > best;
}

}  // namespace detail

// Mean squared error between the (fixed-stream) corrupted validation inputs
// and the clean ones: the no-op denoiser baseline.
template <typename S>
double corrupted_baseline_mse(const Dataset& val, const TrainConfig& cfg) {
  if (val.empty()) throw DataError("corrupted_baseline_mse: empty dataset");
  double acc = 0;
  std::int64_t count = 0;
  for (int i = 0; i < static_cast<int>(val.size()); ++i) {
    auto [clean, labels] = assemble_batch<S>(val, {i});
    auto corrupted = Tensor<S>::from(clean->shape, clean->values);
    detail::corrupt_into_batch(corrupted, 0, clean, cfg, detail::kValNoiseTag, 0, i);
    for (std::size_t j = 0; j < clean->values.size(); ++j) {
      const double d =
          static_cast<double>(corrupted->values[j]) - static_cast<double>(clean->values[j]);
      acc += d * d;
    }
    count += clean->size();
  }
  return acc / static_cast<double>(count);
}

// ---------------------------------------------------------------------------
// Denoising-autoencoder training: reconstruct the clean image from the
// corrupted one, fresh noise per presentation, monitor min val_loss.
// ---------------------------------------------------------------------------
template <typename S>
TrainResult train_autoencoder(ModelGraph<S>& model, const Dataset& train, const Dataset& val,
                              const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DataError("train_autoencoder: empty training dataset");
  if (val.empty()) throw DataError("train_autoencoder: empty validation dataset");
  if (cfg.monitor != TrainConfig::Monitor::MinValLoss)
    throw ConfigError("train_autoencoder: monitor must be min val_loss");

  SgdNesterov<S> opt(cfg.lr, cfg.momentum);
  auto params = model.named_parameters();
  TrainResult result;
  double best_metric = 0;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0, acc_sum = 0;
    std::int64_t seen = 0;
    for (const auto& idx : batch_indices(static_cast<int>(train.size()), cfg.batch_size, cfg.seed,
                                         epoch)) {
      auto [clean, labels] = assemble_batch<S>(train, idx);
      auto corrupted = Tensor<S>::from(clean->shape, clean->values);
      for (std::size_t b = 0; b < idx.size(); ++b)
        detail::corrupt_into_batch(corrupted, b, clean, cfg, detail::kTrainNoiseTag, epoch, idx[b]);

      // lr == 0 freezes the model entirely, moving statistics included
      auto recon = model.forward(corrupted, {.training = true, .update_stats = cfg.lr > 0});
      auto data_loss = cfg.ae_loss == TrainConfig::AeLoss::Bce
                           ? binary_cross_entropy(recon, clean)
                           : mse(recon, clean);
      model.zero_grad();
      backward(data_loss);
      const double penalty = apply_l2(params, cfg.l2);
      opt.step(params);

      const double n = static_cast<double>(idx.size());
      loss_sum += (static_cast<double>(data_loss->item()) + penalty) * n;
      acc_sum += detail::binary_accuracy(recon, clean) * n;
      seen += static_cast<std::int64_t>(idx.size());
    }

    double val_loss_sum = 0, val_acc_sum = 0;
    {
      NoGradGuard no_grad;
      const double penalty = l2_penalty(params, cfg.l2);
      for (const auto& idx :
           detail::sequential_batches(static_cast<int>(val.size()), cfg.batch_size)) {
        auto [clean, labels] = assemble_batch<S>(val, idx);
        auto corrupted = Tensor<S>::from(clean->shape, clean->values);
        for (std::size_t b = 0; b < idx.size(); ++b)
          detail::corrupt_into_batch(corrupted, b, clean, cfg, detail::kValNoiseTag, 0, idx[b]);
        auto recon = model.forward(corrupted, {.training = false});
        auto data_loss = cfg.ae_loss == TrainConfig::AeLoss::Bce
                             ? binary_cross_entropy(recon, clean)
                             : mse(recon, clean);
        const double n = static_cast<double>(idx.size());
        val_loss_sum += (static_cast<double>(data_loss->item()) + penalty) * n;
        val_acc_sum += detail::binary_accuracy(recon, clean) * n;
      }
    }

    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(seen);
    row.acc = acc_sum / static_cast<double>(seen);
    row.val_loss = val_loss_sum / static_cast<double>(val.size());
    row.val_acc = val_acc_sum / static_cast<double>(val.size());
    if (cfg.log_wall_seconds)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rows.push_back(row);
    if (on_epoch) on_epoch(row);

    if (result.log.best_epoch < 0 ||
        detail::improved(cfg.monitor, row.val_loss, best_metric)) {
      best_metric = row.val_loss;
      result.log.best_epoch = epoch;
      result.best = checkpoint_from_model(model, {.epoch = epoch,
                                                  .monitor = "min_val_loss",
                                                  .value = row.val_loss,
                                                  .config_hash = cfg.config_hash,
                                                  .seed = cfg.seed});
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }
  result.last = checkpoint_from_model(
      model, {.epoch = result.log.rows.empty() ? 0 : result.log.rows.back().epoch,
              .monitor = "last",
              .value = result.log.rows.empty() ? 0.0 : result.log.rows.back().val_loss,
              .config_hash = cfg.config_hash,
              .seed = cfg.seed});
  return result;
}

// ---------------------------------------------------------------------------
// Segmentation evaluation and training. Accuracy is pixel accuracy over
// non-void pixels; training monitors max val_acc, all-at-once over the
// whole graph.
// ---------------------------------------------------------------------------
struct EvalResult {
  ConfusionMatrix cm;
  double loss = 0;  // softmax cross-entropy, no penalty term
};

template <typename S>
EvalResult evaluate_segmenter(ModelGraph<S>& model, const Dataset& ds, int batch_size = 5) {
  if (ds.empty()) throw DataError("evaluate: empty dataset");
  NoGradGuard no_grad;
  EvalResult result{ConfusionMatrix(ds.num_classes)};
  double loss_sum = 0;
  for (const auto& idx : detail::sequential_batches(static_cast<int>(ds.size()), batch_size)) {
    auto [images, labels] = assemble_batch<S>(ds, idx);
    auto logits = model.forward(images, {.training = false});
    loss_sum += static_cast<double>(softmax_cross_entropy(logits, labels, ds.void_label)->item()) *
                static_cast<double>(idx.size());
    result.cm.accumulate(argmax_channels(logits), labels, ds.void_label);
  }
  result.loss = loss_sum / static_cast<double>(ds.size());
  return result;
}

template <typename S>
TrainResult train_segmenter(ModelGraph<S>& model, const Dataset& train, const Dataset& val,
                            const TrainConfig& cfg, const EpochCallback& on_epoch = {}) {
  cfg.validate();
  if (train.empty()) throw DataError("train_segmenter: empty training dataset");
  if (val.empty()) throw DataError("train_segmenter: empty validation dataset");
  if (cfg.monitor != TrainConfig::Monitor::MaxValAcc)
    throw ConfigError("train_segmenter: monitor must be max val_acc");

  SgdNesterov<S> opt(cfg.lr, cfg.momentum);
  auto params = model.named_parameters();
  TrainResult result;
  double best_metric = 0;
  int epochs_since_best = 0;

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double loss_sum = 0;
    std::int64_t seen = 0;
    ConfusionMatrix train_cm(train.num_classes);
    for (const auto& idx : batch_indices(static_cast<int>(train.size()), cfg.batch_size, cfg.seed,
                                         epoch)) {
      auto [images, labels] = assemble_batch<S>(train, idx);
      auto logits = model.forward(images, {.training = true, .update_stats = cfg.lr > 0});
      auto data_loss = softmax_cross_entropy(logits, labels, train.void_label);
      model.zero_grad();
      backward(data_loss);
      const double penalty = apply_l2(params, cfg.l2);
      opt.step(params);

      train_cm.accumulate(argmax_channels(logits), labels, train.void_label);
      loss_sum += (static_cast<double>(data_loss->item()) + penalty) *
                  static_cast<double>(idx.size());
      seen += static_cast<std::int64_t>(idx.size());
    }

    auto val_eval = evaluate_segmenter(model, val, cfg.batch_size);
    const double val_penalty = l2_penalty(params, cfg.l2);

    EpochRow row;
    row.epoch = epoch;
    row.loss = loss_sum / static_cast<double>(seen);
    row.acc = train_cm.pixel_accuracy();
    row.val_loss = val_eval.loss + val_penalty;
    row.val_acc = val_eval.cm.pixel_accuracy();
    if (cfg.log_wall_seconds)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.rows.push_back(row);
    if (on_epoch) on_epoch(row);

    if (result.log.best_epoch < 0 || detail::improved(cfg.monitor, row.val_acc, best_metric)) {
      best_metric = row.val_acc;
      result.log.best_epoch = epoch;
      result.best = checkpoint_from_model(model, {.epoch = epoch,
                                                  .monitor = "max_val_acc",
                                                  .value = row.val_acc,
                                                  .config_hash = cfg.config_hash,
                                                  .seed = cfg.seed});
      epochs_since_best = 0;
    } else if (++epochs_since_best >= cfg.patience) {
      break;
    }
  }
  result.last = checkpoint_from_model(
      model, {.epoch = result.log.rows.empty() ? 0 : result.log.rows.back().epoch,
              .monitor = "last",
              .value = result.log.rows.empty() ? 0.0 : result.log.rows.back().val_acc,
              .config_hash = cfg.config_hash,
              .seed = cfg.seed});
  return result;
}

}  // namespace caepl
