#pragma once

#include <chrono>
#include <cstddef>

#include "dpseq/model.hpp"
#include "dpseq/training.hpp"

namespace dpseq {

struct BenchRecord {
  double train_seconds_per_epoch = 0.0;
  double predict_seconds = 0.0;
  std::size_t n_train_tiles = 0;
  std::size_t n_predict_tiles = 0;
  std::size_t param_count = 0;
  unsigned threads = 1;
};

// Times one training epoch and a full prediction sweep. A warm-up forward
// runs first and is excluded from both timings.
template <typename T>
BenchRecord bench_model(DpseqModel<T>& model, const TileSource<T>& train,
                        const TileSource<T>& predict, const TrainConfig& cfg,
                        unsigned threads = 1) {
  using clock = std::chrono::steady_clock;
  BenchRecord rec;
  rec.param_count = param_count(model);
  rec.n_train_tiles = train.size();
  rec.n_predict_tiles = predict.size();
  rec.threads = threads;

  forward(model, predict.size() ? predict.tile(0) : train.tile(0));  // warm-up

  if (train.size()) {
    const std::vector<T> weights(model.config.n_classes, T(1));
    AdamOptimizer<T> opt;
    const auto t0 = clock::now();
    detail::run_epoch(model, train, weights, opt, cfg.base_lr, cfg, /*epoch=*/1);
    rec.train_seconds_per_epoch = std::chrono::duration<double>(clock::now() - t0).count();
  }

  const auto t1 = clock::now();
  for (std::size_t i = 0; i < predict.size(); ++i) {
    Tensor<T> logits = forward(model, predict.tile(i));
    (void)logits;
  }
  rec.predict_seconds = std::chrono::duration<double>(clock::now() - t1).count();
  return rec;
}

}  // namespace dpseq
