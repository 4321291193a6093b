#include <doctest.h>

#include <cmath>
#include <vector>

#include "dpseq/training.hpp"
#include "dpseq/util.hpp"

using namespace dpseq;

namespace {

ModelConfig tiny_config(std::size_t n_classes) {
  ModelConfig c;
  c.depths = {1, 1, 1, 1};
  c.embed_dims = {8, 8, 8, 8};
  c.hidden_dims = {4, 4, 4, 4};
  c.downsample = {false, false, false};
  c.patch_edge = 2;
  c.image_edge = 8;
  c.head_dims = {8, 4};
  c.n_classes = n_classes;
  c.mlp_ratio = 2;
  c.dropout = 0.1;
  return c;
}

// class k tiles cluster around distinct constant levels
InMemoryTiles<float> separable_tiles(std::size_t per_class, std::size_t k, std::uint64_t seed,
                                     std::size_t skew_class = SIZE_MAX, std::size_t skew_extra = 0) {
  InMemoryTiles<float> data;
  Rng rng(seed);
  for (std::size_t c = 0; c < k; ++c) {
    const std::size_t n = per_class + (c == skew_class ? skew_extra : 0);
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> v(8 * 8 * 3);
      const double level = -0.8 + 1.6 * static_cast<double>(c) / static_cast<double>(k - 1);
      for (auto& x : v) x = static_cast<float>(level + rng.uniform(-0.2, 0.2));
      data.add(Tensor<float>({8, 8, 3}, std::move(v)), c,
               "P" + std::to_string(c) + "-" + std::to_string(i));
    }
  }
  return data;
}

}  // namespace

TEST_CASE("weighted cross entropy values") {
  // uniform two-way logits: loss is ln 2 regardless of the label
  Tensor<double> logits({1, 2}, {0.0, 0.0});
  CHECK(cross_entropy(logits, {0}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(cross_entropy(logits, {1}).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // manual oracle over a random batch
  Tensor<double> batch({3, 3}, {1.0, -0.5, 0.2, 0.0, 2.0, -1.0, 0.3, 0.3, 0.9});
  std::vector<std::size_t> labels{2, 0, 1};
  std::vector<double> w{0.5, 2.0, 1.25};
  double num = 0.0, den = 0.0;
  for (std::size_t b = 0; b < 3; ++b) {
    double z = 0.0;
    for (std::size_t j = 0; j < 3; ++j) z += std::exp(batch.values()[b * 3 + j]);
    const double logp = batch.values()[b * 3 + labels[b]] - std::log(z);
    num += w[labels[b]] * -logp;
    den += w[labels[b]];
  }
  CHECK(weighted_cross_entropy(batch, labels, w).item() ==
        doctest::Approx(num / den).epsilon(1e-12));

  // normalization makes the loss invariant to rescaling every weight
  std::vector<double> w2{1.5, 6.0, 3.75};
  CHECK(weighted_cross_entropy(batch, labels, w2).item() ==
        doctest::Approx(weighted_cross_entropy(batch, labels, w).item()).epsilon(1e-12));

  // uniform weights reduce to plain cross-entropy bitwise
  CHECK(weighted_cross_entropy(batch, labels, {1.0, 1.0, 1.0}).item() ==
        cross_entropy(batch, labels).item());

  CHECK_THROWS_AS(weighted_cross_entropy(batch, {0, 1}, w), ShapeError);
  CHECK_THROWS_AS(weighted_cross_entropy(batch, {0, 1, 5}, w), std::out_of_range);
  CHECK_THROWS_AS(weighted_cross_entropy(batch, labels, {1.0}), ShapeError);
}

TEST_CASE("inverse frequency weights") {
  // 972 negatives vs 166 positives: N/(k·n_c)
  std::vector<std::size_t> labels(972, 0);
  labels.insert(labels.end(), 166, 1);
  std::vector<double> w = inverse_frequency_weights(labels, 2);
  CHECK(w[0] == doctest::Approx(1138.0 / (2.0 * 972.0)).epsilon(1e-12));  // 0.58539...
  CHECK(w[1] == doctest::Approx(1138.0 / (2.0 * 166.0)).epsilon(1e-12));  // 3.42771...

  // balanced classes give unit weights
  std::vector<std::size_t> even{0, 1, 0, 1};
  CHECK(inverse_frequency_weights(even, 2) == std::vector<double>{1.0, 1.0});

  CHECK_THROWS_AS(inverse_frequency_weights({0, 0}, 2), std::invalid_argument);
  CHECK_THROWS_AS(inverse_frequency_weights({0, 3}, 2), std::out_of_range);
}

TEST_CASE("adam step") {
  std::vector<double> param{1.0, -2.0, 0.5};
  AdamMoments<double> state;

  // zero gradient leaves the parameter untouched
  adam_step<double>(param, {0.0, 0.0, 0.0}, state, 1, 0.01);
  CHECK(param == std::vector<double>{1.0, -2.0, 0.5});

  // first step moves each coordinate by ~lr against the gradient sign
  AdamMoments<double> fresh;
  std::vector<double> p2{1.0, -2.0, 0.5};
  adam_step<double>(p2, {0.3, -4.0, 1e-3}, fresh, 1, 0.01);
  CHECK(p2[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-4));
  CHECK(p2[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-4));
  CHECK(p2[2] < 0.5);

  CHECK_THROWS_AS(adam_step<double>(p2, {1.0}, fresh, 2, 0.01), ShapeError);
}

TEST_CASE("cosine schedule") {
  CHECK(cosine_lr(0, 50, 1e-4) == doctest::Approx(1e-4).epsilon(1e-15));
  CHECK(cosine_lr(50, 50, 1e-4) == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(cosine_lr(25, 50, 1e-4) == doctest::Approx(5e-5).epsilon(1e-12));
  // monotone decreasing over the horizon
  for (std::size_t t = 1; t <= 50; ++t) CHECK(cosine_lr(t, 50, 1e-4) < cosine_lr(t - 1, 50, 1e-4));
  CHECK_THROWS_AS(cosine_lr(51, 50, 1e-4), std::out_of_range);
}

TEST_CASE("early stopping") {
  // best at epoch 3, patience 8: stops after epoch 11
  EarlyStopping s(8);
  std::size_t stopped_at = 0;
  for (std::size_t e = 1; e <= 20; ++e) {
    const double loss = e <= 3 ? 1.0 / static_cast<double>(e) : 0.5;
    if (s.update(e, loss)) {
      stopped_at = e;
      break;
    }
  }
  CHECK(stopped_at == 11);
  CHECK(s.best_epoch() == 3);

  // an improvement resets the countdown
  EarlyStopping r(2);
  CHECK_FALSE(r.update(1, 1.0));
  CHECK_FALSE(r.update(2, 2.0));
  CHECK_FALSE(r.update(3, 0.5));  // new best at 3
  CHECK_FALSE(r.update(4, 0.6));
  CHECK(r.update(5, 0.7));

  // never stops while strictly improving
  EarlyStopping m(1);
  for (std::size_t e = 1; e <= 30; ++e) CHECK_FALSE(m.update(e, -static_cast<double>(e)));

  CHECK_THROWS_AS(EarlyStopping(0), std::invalid_argument);
}

TEST_CASE("tissue fine-tuning runs a fixed-rate budget") {
  DpseqModel<float> model = init_model<float>(tiny_config(3), 8);
  InMemoryTiles<float> train = separable_tiles(12, 3, 91);

  TrainConfig cfg;
  cfg.base_lr = 2e-3;
  cfg.max_epochs = 2;
  cfg.batch_size = 8;
  cfg.seed = 5;
  TrainResult r = finetune_tissue(model, train, cfg);

  REQUIRE(r.log.size() == 2);
  CHECK(r.log[0].epoch == 1);
  CHECK(r.log[1].epoch == 2);
  CHECK(r.log[0].lr == 2e-3);
  CHECK(r.log[1].lr == 2e-3);
  CHECK(std::isnan(r.log[0].val_loss));
  CHECK(r.log[1].train_loss < r.log[0].train_loss);

  // bitwise determinism for a fixed seed
  DpseqModel<float> again = init_model<float>(tiny_config(3), 8);
  TrainResult r2 = finetune_tissue(again, train, cfg);
  CHECK(model_checksum(model) == model_checksum(again));
  CHECK(r2.log[0].train_loss == r.log[0].train_loss);
  CHECK(r2.log[1].train_loss == r.log[1].train_loss);

  CHECK_THROWS_AS(finetune_tissue(model, InMemoryTiles<float>{}, cfg), std::invalid_argument);
}

TEST_CASE("biomarker training converges and restores the best epoch") {
  DpseqModel<float> model = init_model<float>(tiny_config(2), 17);
  InMemoryTiles<float> train = separable_tiles(14, 2, 92, /*skew_class=*/1, /*skew_extra=*/14);
  InMemoryTiles<float> val = separable_tiles(4, 2, 93);

  TrainConfig cfg;
  cfg.base_lr = 2e-3;
  cfg.schedule = TrainConfig::Schedule::cosine;
  cfg.max_epochs = 6;
  cfg.patience = 8;
  cfg.batch_size = 8;
  cfg.seed = 9;
  cfg.dropout = false;
  TrainResult r = train_biomarker(model, train, val, cfg);

  REQUIRE(!r.log.empty());
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
  CHECK(r.log.front().lr == doctest::Approx(cosine_lr(0, 6, 2e-3)));
  CHECK(r.log[1].lr == doctest::Approx(cosine_lr(1, 6, 2e-3)));
  REQUIRE(r.best_epoch >= 1);
  REQUIRE(r.best_epoch <= r.log.size());

  // the returned weights score the best logged validation loss
  double best_val = r.log[0].val_loss;
  for (const auto& e : r.log) best_val = std::min(best_val, e.val_loss);
  CHECK(r.log[r.best_epoch - 1].val_loss == doctest::Approx(best_val));
  double revalidated = 0.0;
  for (std::size_t i = 0; i < val.size(); ++i) {
    Tensor<float> logits = forward(model, val.tile(i));
    Tensor<float> row = reshape(logits, {std::size_t(1), logits.size()});
    revalidated += cross_entropy(row, {val.label(i)}).item();
  }
  revalidated /= static_cast<double>(val.size());
  CHECK(revalidated == doctest::Approx(best_val).epsilon(1e-4));

  // a single-class training set is rejected
  InMemoryTiles<float> flat;
  for (std::size_t i = 0; i < 4; ++i)
    flat.add(Tensor<float>::zeros({8, 8, 3}), 0, "P0");
  CHECK_THROWS_AS(train_biomarker(model, flat, val, cfg), std::invalid_argument);
}

TEST_CASE("early stopping cuts the biomarker epoch budget") {
  DpseqModel<float> model = init_model<float>(tiny_config(2), 21);
  InMemoryTiles<float> train = separable_tiles(10, 2, 94);
  // validation labels are inverted, so its loss rises as training fits and
  // the patience window must fire
  InMemoryTiles<float> raw = separable_tiles(3, 2, 95);
  InMemoryTiles<float> val;
  for (std::size_t i = 0; i < raw.size(); ++i)
    val.add(raw.tile(i), 1 - raw.label(i), raw.patient(i));

  TrainConfig cfg;
  cfg.base_lr = 5e-3;
  cfg.schedule = TrainConfig::Schedule::cosine;
  cfg.max_epochs = 40;
  cfg.patience = 2;
  cfg.batch_size = 8;
  cfg.seed = 10;
  cfg.dropout = false;
  TrainResult r = train_biomarker(model, train, val, cfg);

  // the task saturates quickly, so patience 2 should fire well before 40
  CHECK(r.log.size() < 40);
  CHECK(r.log.size() - r.best_epoch == 2);
}
