#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "dpseq/model.hpp"
#include "dpseq/ops.hpp"
#include "dpseq/rng.hpp"
#include "dpseq/tensor.hpp"

namespace dpseq {

struct TrainConfig {
  double base_lr = 1e-4;
  enum class Schedule { fixed, cosine } schedule = Schedule::fixed;
  std::size_t max_epochs = 50;
  std::size_t patience = 8;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  bool dropout = true;
  // empty -> inverse class frequency from the training labels
  std::vector<double> class_weights;

  void validate() const {
    if (max_epochs < 1) throw std::invalid_argument("max_epochs must be at least 1");
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
    if (base_lr <= 0.0) throw std::invalid_argument("base_lr must be positive");
    for (double w : class_weights)
      if (w <= 0.0) throw std::invalid_argument("class weights must be positive");
  }
};

// w_c = N / (k · n_c)
inline std::vector<double> inverse_frequency_weights(const std::vector<std::size_t>& labels,
                                                     std::size_t k) {
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t y : labels) {
    if (y >= k) throw std::out_of_range("label " + std::to_string(y) + " out of range [0," +
                                        std::to_string(k) + ")");
    ++counts[y];
  }
  std::vector<double> w(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0)
      throw std::invalid_argument("class " + std::to_string(c) + " has no training examples");
    w[c] = static_cast<double>(labels.size()) / (static_cast<double>(k) * counts[c]);
  }
  return w;
}

// Mean of w_y·(−log softmax(logits)_y), normalized by the mean applied
// weight, so uniform weights reduce to plain cross-entropy exactly.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                                 const std::vector<T>& weights, Tape<T>* tape = nullptr) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("logits " + shape_str(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t k = logits.dim(1);
  if (weights.size() != k)
    throw ShapeError("expected " + std::to_string(k) + " class weights, got " +
                     std::to_string(weights.size()));
  T weight_sum = T(0);
  std::vector<T> picked(labels.size() * k, T(0));
  for (std::size_t b = 0; b < labels.size(); ++b) {
    if (labels[b] >= k)
      throw std::out_of_range("label " + std::to_string(labels[b]) + " out of range [0," +
                              std::to_string(k) + ")");
    picked[b * k + labels[b]] = weights[labels[b]];
    weight_sum += weights[labels[b]];
  }
  Tensor<T> logp = log_softmax(logits, tape);
  Tensor<T> masked = mul(logp, Tensor<T>(logits.shape(), std::move(picked)), tape);
  return scale(sum_all(masked, tape), T(-1) / weight_sum, tape);
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& labels,
                        Tape<T>* tape = nullptr) {
  return weighted_cross_entropy(logits, labels, std::vector<T>(logits.dim(1), T(1)), tape);
}

// ---- Adam ------------------------------------------------------------------

template <typename T>
struct AdamMoments {
  std::vector<T> m, v;
};

// Standard bias-corrected Adam update, applied in place.
template <typename T>
void adam_step(std::vector<T>& param, const std::vector<T>& grad, AdamMoments<T>& state,
               std::size_t step_count, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
               T eps = T(1e-8)) {
  if (grad.size() != param.size())
    throw ShapeError("adam_step gradient size " + std::to_string(grad.size()) +
                     " does not match parameter size " + std::to_string(param.size()));
  if (state.m.empty()) {
    state.m.assign(param.size(), T(0));
    state.v.assign(param.size(), T(0));
  }
  const T bc1 = T(1) - std::pow(beta1, T(step_count));
  const T bc2 = T(1) - std::pow(beta2, T(step_count));
  for (std::size_t i = 0; i < param.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (T(1) - beta1) * grad[i];
    state.v[i] = beta2 * state.v[i] + (T(1) - beta2) * grad[i] * grad[i];
    const T mhat = state.m[i] / bc1;
    const T vhat = state.v[i] / bc2;
    param[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

template <typename T>
class AdamOptimizer {
 public:
  void step(DpseqModel<T>& model, Tape<T>& tape, T lr) {
    ++step_count_;
    visit_params(model, [&](const std::string& name, Tensor<T>& t) {
      const std::vector<T>* g = tape.grad(t);
      if (!g) return;  // parameter did not reach the loss this step
      adam_step(t.values(), *g, moments_[name], step_count_, lr);
    });
  }

  std::size_t step_count() const { return step_count_; }

 private:
  std::unordered_map<std::string, AdamMoments<T>> moments_;
  std::size_t step_count_ = 0;
};

// ---- schedule and stopping ---------------------------------------------------

// lr0·(1 + cos(π·t/T))/2 for t in [0, T]
inline double cosine_lr(std::size_t t, std::size_t horizon, double lr0) {
  if (t > horizon)
    throw std::out_of_range("cosine_lr step " + std::to_string(t) + " beyond horizon " +
                            std::to_string(horizon));
  return lr0 * (1.0 + std::cos(M_PI * static_cast<double>(t) / static_cast<double>(horizon))) / 2.0;
}

// Stops once the best validation loss is `patience` epochs old. Epochs are
// 1-based; best at epoch 3 with patience 8 stops after epoch 11.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience) : patience_(patience) {
    if (patience < 1) throw std::invalid_argument("patience must be at least 1");
  }

  // feed each epoch's validation loss in order; true means stop
  bool update(std::size_t epoch, double val_loss) {
    if (val_loss < best_loss_) {
      best_loss_ = val_loss;
      best_epoch_ = epoch;
    }
    return epoch - best_epoch_ >= patience_;
  }

  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
};

// ---- training loops ----------------------------------------------------------

// Tile access for the train loops; implementations hand back tiles already
// standardized to the model's input range.
template <typename T>
class TileSource {
 public:
  virtual ~TileSource() = default;
  virtual std::size_t size() const = 0;
  virtual Tensor<T> tile(std::size_t i) const = 0;
  virtual std::size_t label(std::size_t i) const = 0;
  virtual std::string patient(std::size_t i) const = 0;
};

template <typename T>
class InMemoryTiles : public TileSource<T> {
 public:
  void add(Tensor<T> tile, std::size_t label, std::string patient) {
    tiles_.push_back(std::move(tile));
    labels_.push_back(label);
    patients_.push_back(std::move(patient));
  }
  std::size_t size() const override { return tiles_.size(); }
  Tensor<T> tile(std::size_t i) const override { return tiles_[i]; }
  std::size_t label(std::size_t i) const override { return labels_[i]; }
  std::string patient(std::size_t i) const override { return patients_[i]; }

 private:
  std::vector<Tensor<T>> tiles_;
  std::vector<std::size_t> labels_;
  std::vector<std::string> patients_;
};

struct EpochLog {
  std::size_t epoch;  // 1-based
  double train_loss;
  double val_loss;  // NaN when no validation set
  double lr;
  double seconds;
};

inline void write_training_log(const std::filesystem::path& path,
                               const std::vector<EpochLog>& log) {
  std::ofstream out(path);
  out << "epoch,train_loss,val_loss,lr,seconds\n";
  out.precision(10);
  for (const auto& e : log)
    out << e.epoch << ',' << e.train_loss << ',' << e.val_loss << ',' << e.lr << ',' << e.seconds
        << '\n';
}

struct TrainResult {
  std::vector<EpochLog> log;
  std::size_t best_epoch = 0;  // 0 when early stopping was not active
};

namespace detail {

template <typename T>
double run_epoch(DpseqModel<T>& model, const TileSource<T>& data, const std::vector<T>& weights,
                 AdamOptimizer<T>& opt, double lr, const TrainConfig& cfg, std::size_t epoch) {
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(derive_seed(cfg.seed, "epoch-shuffle-" + std::to_string(epoch)));
  shuffle_rng.shuffle(order);
  Rng dropout_rng(derive_seed(cfg.seed, "dropout-" + std::to_string(epoch)));

  double loss_sum = 0.0;
  std::size_t seen = 0;
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t bs = std::min(cfg.batch_size, order.size() - start);
    Tape<T> tape;
    std::vector<Tensor<T>> rows;
    std::vector<std::size_t> labels;
    for (std::size_t b = 0; b < bs; ++b) {
      const std::size_t i = order[start + b];
      Tensor<T> logits = forward(model, data.tile(i), &tape, cfg.dropout, &dropout_rng);
      rows.push_back(reshape(logits, {std::size_t(1), logits.size()}, &tape));
      labels.push_back(data.label(i));
    }
    Tensor<T> loss = weighted_cross_entropy(concat_axis0(rows, &tape), labels, weights, &tape);
    tape.backward(loss);
    opt.step(model, tape, static_cast<T>(lr));
    loss_sum += static_cast<double>(loss.item()) * bs;
    seen += bs;
  }
  return loss_sum / static_cast<double>(seen);
}

template <typename T>
double eval_loss(const DpseqModel<T>& model, const TileSource<T>& data,
                 const std::vector<T>& weights) {
  double loss_sum = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Tensor<T> logits = forward(model, data.tile(i));
    Tensor<T> row = reshape(logits, {std::size_t(1), logits.size()});
    loss_sum += static_cast<double>(
        weighted_cross_entropy(row, {data.label(i)}, weights).item());
  }
  return loss_sum / static_cast<double>(data.size());
}

template <typename T>
std::vector<std::vector<T>> snapshot(DpseqModel<T>& model) {
  std::vector<std::vector<T>> s;
  visit_params(model, [&](const std::string&, Tensor<T>& t) { s.push_back(t.values()); });
  return s;
}

template <typename T>
void restore(DpseqModel<T>& model, const std::vector<std::vector<T>>& s) {
  std::size_t i = 0;
  visit_params(model, [&](const std::string&, Tensor<T>& t) { t.values() = s[i++]; });
}

template <typename T>
std::vector<T> resolve_weights(const TileSource<T>& train, const TrainConfig& cfg,
                               std::size_t k, bool weighted) {
  if (!cfg.class_weights.empty()) {
    if (cfg.class_weights.size() != k)
      throw std::invalid_argument("config supplies " + std::to_string(cfg.class_weights.size()) +
                                  " class weights for " + std::to_string(k) + " classes");
    return std::vector<T>(cfg.class_weights.begin(), cfg.class_weights.end());
  }
  if (!weighted) return std::vector<T>(k, T(1));
  std::vector<std::size_t> labels(train.size());
  for (std::size_t i = 0; i < train.size(); ++i) labels[i] = train.label(i);
  std::vector<double> w = inverse_frequency_weights(labels, k);
  return std::vector<T>(w.begin(), w.end());
}

}  // namespace detail

// Phase 1: tissue fine-tuning. Fixed learning rate, unweighted cross-entropy,
// a hard epoch budget (two, per the protocol) and no early stopping.
template <typename T>
TrainResult finetune_tissue(DpseqModel<T>& model, const TileSource<T>& train,
                            const TrainConfig& cfg) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  const std::vector<T> weights = detail::resolve_weights(train, cfg, model.config.n_classes,
                                                         /*weighted=*/false);
  AdamOptimizer<T> opt;
  TrainResult result;
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double train_loss = detail::run_epoch(model, train, weights, opt, cfg.base_lr, cfg, epoch);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, train_loss, std::numeric_limits<double>::quiet_NaN(),
                          cfg.base_lr, secs});
  }
  return result;
}

// Phase 2: biomarker training. Weighted cross-entropy (inverse-frequency by
// default), cosine annealing over the epoch budget, patience-based early
// stopping on validation loss, best-epoch weights restored on exit.
// final_weights, when supplied, receives the last epoch's parameters (the
// model itself exits holding the best epoch's).
template <typename T>
TrainResult train_biomarker(DpseqModel<T>& model, const TileSource<T>& train,
                            const TileSource<T>& val, const TrainConfig& cfg,
                            std::vector<std::vector<T>>* final_weights = nullptr) {
  cfg.validate();
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  if (val.size() == 0) throw std::invalid_argument("empty validation set");
  {
    std::size_t first = train.label(0);
    bool mixed = false;
    for (std::size_t i = 1; i < train.size(); ++i) mixed = mixed || train.label(i) != first;
    if (!mixed) throw std::invalid_argument("training set contains a single class");
  }
  const std::vector<T> weights = detail::resolve_weights(train, cfg, model.config.n_classes,
                                                         /*weighted=*/true);
  AdamOptimizer<T> opt;
  EarlyStopping stopping(cfg.patience);
  TrainResult result;
  std::vector<std::vector<T>> best = detail::snapshot(model);
  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double lr = cfg.schedule == TrainConfig::Schedule::cosine
                          ? cosine_lr(epoch - 1, cfg.max_epochs, cfg.base_lr)
                          : cfg.base_lr;
    const auto t0 = std::chrono::steady_clock::now();
    const double train_loss = detail::run_epoch(model, train, weights, opt, lr, cfg, epoch);
    const double val_loss = detail::eval_loss(model, val, weights);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back({epoch, train_loss, val_loss, lr, secs});
    const std::size_t prev_best = stopping.best_epoch();
    const bool stop = stopping.update(epoch, val_loss);
    if (stopping.best_epoch() != prev_best || epoch == 1) best = detail::snapshot(model);
    if (stop) break;
  }
  if (final_weights) *final_weights = detail::snapshot(model);
  detail::restore(model, best);
  result.best_epoch = stopping.best_epoch();
  return result;
}

}  // namespace dpseq
