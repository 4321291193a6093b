#include "dpseq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "dpseq/rng.hpp"

namespace dpseq {

double aggregate_patient(const std::vector<double>& tile_scores) {
  if (tile_scores.empty()) throw MetricError("aggregate_patient on an empty tile list");
  double sum = 0.0;
  for (double s : tile_scores) sum += s;
  return sum / static_cast<double>(tile_scores.size());
}

namespace {
void check_scores(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size())
    throw MetricError("scores and labels differ in length: " + std::to_string(scores.size()) +
                      " vs " + std::to_string(labels.size()));
  if (scores.empty()) throw MetricError("empty score list");
}

// indices sorted by descending score
std::vector<std::size_t> descending_order(const std::vector<double>& scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}
}  // namespace

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores(scores, labels);
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg)++;
  if (n_pos == 0 || n_neg == 0)
    throw MetricError("auroc needs both classes (got " + std::to_string(n_pos) + " positives, " +
                      std::to_string(n_neg) + " negatives)");

  // group equal scores so ties contribute exactly half a pair each
  std::vector<std::size_t> order = descending_order(scores);
  double won = 0.0, tied = 0.0;
  std::size_t neg_above = 0;  // negatives with strictly higher score
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    std::size_t pos_here = 0, neg_here = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? pos_here : neg_here)++;
      ++j;
    }
    won += static_cast<double>(pos_here) * static_cast<double>(n_neg - neg_above - neg_here);
    tied += static_cast<double>(pos_here) * static_cast<double>(neg_here);
    neg_above += neg_here;
    i = j;
  }
  return (won + 0.5 * tied) / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(const std::vector<double>& scores, const std::vector<int>& labels) {
  check_scores(scores, labels);
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y ? 1 : 0;
  if (n_pos == 0) throw MetricError("auprc needs at least one positive");

  std::vector<std::size_t> order = descending_order(scores);
  double ap = 0.0;
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return ap;
}

BootstrapCi bootstrap_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                         const Metric& metric, std::size_t n, std::uint64_t seed) {
  check_scores(scores, labels);
  constexpr std::size_t kMaxRetries = 100;
  Rng rng(derive_seed(seed, "bootstrap"));
  std::vector<double> stats;
  stats.reserve(n);
  BootstrapCi ci;
  std::vector<double> rs(scores.size());
  std::vector<int> rl(labels.size());
  for (std::size_t it = 0; it < n; ++it) {
    bool ok = false;
    for (std::size_t attempt = 0; attempt <= kMaxRetries && !ok; ++attempt) {
      bool has_pos = false, has_neg = false;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        const std::size_t pick = static_cast<std::size_t>(rng.below(scores.size()));
        rs[i] = scores[pick];
        rl[i] = labels[pick];
        (rl[i] ? has_pos : has_neg) = true;
      }
      ok = has_pos && has_neg;
    }
    if (!ok) {
      ++ci.skipped;
      continue;
    }
    stats.push_back(metric(rs, rl));
  }
  if (stats.size() < 2)
    throw MetricError("bootstrap produced only " + std::to_string(stats.size()) +
                      " valid resamples");
  std::sort(stats.begin(), stats.end());
  auto pct = [&](double p) {
    const double pos = p / 100.0 * static_cast<double>(stats.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, stats.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return stats[lo] * (1.0 - frac) + stats[hi] * frac;
  };
  ci.lo = pct(2.5);
  ci.hi = pct(97.5);
  return ci;
}

std::vector<FoldSplit> kfold_split(const std::vector<std::pair<std::string, int>>& patients,
                                   std::size_t k, double val_fraction, std::uint64_t seed) {
  if (k < 2) throw MetricError("kfold_split needs k >= 2");
  if (val_fraction <= 0.0 || val_fraction >= 1.0)
    throw MetricError("val_fraction must lie in (0,1)");

  std::map<int, std::vector<std::string>> by_class;
  for (const auto& [id, label] : patients) by_class[label].push_back(id);
  for (const auto& [label, ids] : by_class)
    if (ids.size() < k)
      throw MetricError("class " + std::to_string(label) + " has only " +
                        std::to_string(ids.size()) + " patients, needs at least " +
                        std::to_string(k) + " for stratified " + std::to_string(k) + "-fold");

  // deal each class round-robin into folds: per-fold prevalence within one
  // patient of the global value
  std::vector<std::vector<std::pair<std::string, int>>> folds(k);
  for (auto& [label, ids] : by_class) {
    Rng rng(derive_seed(seed, "kfold-class-" + std::to_string(label)));
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].emplace_back(ids[i], label);
  }

  std::vector<FoldSplit> splits(k);
  for (std::size_t f = 0; f < k; ++f) {
    for (const auto& [id, label] : folds[f]) splits[f].test.push_back(id);
    std::map<int, std::vector<std::string>> rest;
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      for (const auto& [id, label] : folds[g]) rest[label].push_back(id);
    }
    for (auto& [label, ids] : rest) {
      Rng rng(derive_seed(seed, "kfold-val-" + std::to_string(f) + "-" + std::to_string(label)));
      rng.shuffle(ids);
      const std::size_t n_val = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::llround(ids.size() * val_fraction)));
      for (std::size_t i = 0; i < ids.size(); ++i)
        (i < n_val ? splits[f].val : splits[f].train).push_back(ids[i]);
    }
  }
  return splits;
}

MeanSd cv_summary(const std::vector<double>& fold_values) {
  if (fold_values.size() < 2) throw MetricError("cv_summary needs at least 2 folds");
  MeanSd out;
  for (double v : fold_values) out.mean += v;
  out.mean /= static_cast<double>(fold_values.size());
  double ss = 0.0;
  for (double v : fold_values) ss += (v - out.mean) * (v - out.mean);
  out.sd = std::sqrt(ss / static_cast<double>(fold_values.size() - 1));
  return out;
}

std::vector<CurvePoint> roc_curve(const std::vector<double>& scores,
                                  const std::vector<int>& labels) {
  check_scores(scores, labels);
  std::size_t n_pos = 0, n_neg = 0;
  for (int y : labels) (y ? n_pos : n_neg)++;
  std::vector<std::size_t> order = descending_order(scores);
  std::vector<CurvePoint> pts{{0.0, 0.0}};
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    pts.push_back({n_neg ? static_cast<double>(fp) / n_neg : 0.0,
                   n_pos ? static_cast<double>(tp) / n_pos : 0.0});
    i = j;
  }
  return pts;
}

std::vector<CurvePoint> pr_curve(const std::vector<double>& scores,
                                 const std::vector<int>& labels) {
  check_scores(scores, labels);
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y ? 1 : 0;
  if (n_pos == 0) throw MetricError("pr_curve needs at least one positive");
  std::vector<std::size_t> order = descending_order(scores);
  std::vector<CurvePoint> pts;
  std::size_t tp = 0, fp = 0, i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    pts.push_back({static_cast<double>(tp) / n_pos, static_cast<double>(tp) / (tp + fp)});
    i = j;
  }
  return pts;
}

}  // namespace dpseq
