#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "dpseq/metrics.hpp"
#include "dpseq/rng.hpp"

using namespace dpseq;

namespace {

// O(n^2) pairwise Mann-Whitney reference
double auroc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  double won = 0.0, tied = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (y[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (y[j] != 0) continue;
      ++pairs;
      if (s[i] > s[j]) won += 1.0;
      else if (s[i] == s[j]) tied += 1.0;
    }
  }
  return (won + 0.5 * tied) / static_cast<double>(pairs);
}

// average precision by sweeping distinct scores descending, tie groups whole
double auprc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<double> cuts(s);
  std::sort(cuts.begin(), cuts.end(), std::greater<>());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
  const double total_pos = static_cast<double>(std::count(y.begin(), y.end(), 1));
  double ap = 0.0, prev_recall = 0.0;
  for (double cut : cuts) {
    double tp = 0.0, fp = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
      if (s[i] >= cut) (y[i] == 1 ? tp : fp) += 1.0;
    const double recall = tp / total_pos;
    const double precision = tp / (tp + fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

}  // namespace

TEST_CASE("patient aggregation") {
  CHECK(aggregate_patient({0.2, 0.4, 0.9}) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(aggregate_patient({0.7}) == 0.7);
  CHECK_THROWS_AS(aggregate_patient({}), MetricError);
}

TEST_CASE("auroc closed-form cases") {
  // one discordant pair out of four: 0.75
  CHECK(auroc({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0}) == 0.75);
  // perfect separation and its reverse
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}) == 1.0);
  CHECK(auroc({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1}) == 0.0);
  // all scores tied: chance
  CHECK(auroc({0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}) == 0.5);

  CHECK_THROWS_AS(auroc({0.5, 0.5}, {1, 1}), MetricError);
  CHECK_THROWS_AS(auroc({0.5, 0.5}, {0, 0}), MetricError);
  CHECK_THROWS_AS(auroc({0.5}, {1, 0}), MetricError);
}

TEST_CASE("auroc agrees with the pairwise oracle bit for bit") {
  Rng rng(derive_seed(31, "auroc-oracle"));
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(199);
    std::vector<double> s(n);
    std::vector<int> y(n);
    // coarse grid of scores forces plenty of exact ties
    for (auto& v : s) v = static_cast<double>(rng.below(trial % 3 == 0 ? 4 : 32)) / 31.0;
    bool has_pos = false, has_neg = false;
    for (auto& l : y) {
      l = rng.uniform() < 0.4 ? 1 : 0;
      (l ? has_pos : has_neg) = true;
    }
    if (!has_pos || !has_neg) {
      y[0] = 1;
      y[1] = 0;
    }
    CHECK(auroc(s, y) == auroc_oracle(s, y));
  }
}

TEST_CASE("auprc closed-form and exhaustive small cases") {
  // single positive ranked second: AP = 0.5
  CHECK(auprc({0.9, 0.1}, {0, 1}) == 0.5);
  CHECK(auprc({0.9, 0.1}, {1, 0}) == 1.0);

  // every labeling of 8 fixed distinct scores matches the sweep oracle
  std::vector<double> s{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  for (unsigned mask = 1; mask < 255; ++mask) {
    std::vector<int> y(8);
    for (std::size_t i = 0; i < 8; ++i) y[i] = (mask >> i) & 1u;
    CHECK(auprc(s, y) == doctest::Approx(auprc_oracle(s, y)).epsilon(1e-12));
  }

  // tied-score labelings too
  std::vector<double> tied{0.5, 0.5, 0.7, 0.7, 0.1, 0.9, 0.9, 0.5};
  for (unsigned mask = 1; mask < 255; ++mask) {
    std::vector<int> y(8);
    for (std::size_t i = 0; i < 8; ++i) y[i] = (mask >> i) & 1u;
    CHECK(auprc(tied, y) == doctest::Approx(auprc_oracle(tied, y)).epsilon(1e-12));
  }

  CHECK_THROWS_AS(auprc({0.5, 0.5}, {0, 0}), MetricError);
}

TEST_CASE("auprc of random scores approaches prevalence") {
  Rng rng(derive_seed(32, "auprc-prev"));
  const std::size_t n = 4000;
  std::vector<double> s(n);
  std::vector<int> y(n);
  for (auto& v : s) v = rng.uniform();
  std::size_t pos = 0;
  for (auto& l : y) {
    l = rng.uniform() < 0.3 ? 1 : 0;
    pos += l;
  }
  const double prevalence = static_cast<double>(pos) / n;
  CHECK(auprc(s, y) == doctest::Approx(prevalence).epsilon(0.15));
}

TEST_CASE("roc and pr curves") {
  std::vector<double> s{0.9, 0.8, 0.7, 0.1};
  std::vector<int> y{1, 0, 1, 0};
  auto roc = roc_curve(s, y);
  REQUIRE(!roc.empty());
  CHECK(roc.front().x == 0.0);
  CHECK(roc.back().x == 1.0);
  CHECK(roc.back().y == 1.0);
  for (std::size_t i = 1; i < roc.size(); ++i) {
    CHECK(roc[i].x >= roc[i - 1].x);
    CHECK(roc[i].y >= roc[i - 1].y);
  }

  auto pr = pr_curve(s, y);
  REQUIRE(!pr.empty());
  CHECK(pr.back().x == 1.0);
  for (const auto& p : pr) {
    CHECK(p.y >= 0.0);
    CHECK(p.y <= 1.0);
  }
}

TEST_CASE("bootstrap confidence intervals") {
  Rng rng(derive_seed(33, "bootstrap-data"));
  std::vector<double> s;
  std::vector<int> y;
  for (int i = 0; i < 60; ++i) {
    const int label = i % 3 == 0 ? 1 : 0;
    s.push_back(label ? rng.uniform(0.4, 1.0) : rng.uniform(0.0, 0.6));
    y.push_back(label);
  }
  const double point = auroc(s, y);
  BootstrapCi ci = bootstrap_ci(s, y, auroc, 1000, 7);
  CHECK(ci.lo <= point);
  CHECK(ci.hi >= point);
  CHECK(ci.lo < ci.hi);
  CHECK(ci.lo >= 0.0);
  CHECK(ci.hi <= 1.0);
  CHECK(ci.skipped == 0);

  // deterministic per seed
  BootstrapCi again = bootstrap_ci(s, y, auroc, 1000, 7);
  CHECK(again.lo == ci.lo);
  CHECK(again.hi == ci.hi);
  BootstrapCi other = bootstrap_ci(s, y, auroc, 1000, 8);
  CHECK((other.lo != ci.lo || other.hi != ci.hi));

  // a degenerate cohort with one positive drops single-class resamples
  std::vector<double> tiny{0.9, 0.1, 0.2, 0.3};
  std::vector<int> tiny_y{1, 0, 0, 0};
  BootstrapCi degenerate = bootstrap_ci(tiny, tiny_y, auroc, 200, 1);
  CHECK(degenerate.lo <= degenerate.hi);
}

TEST_CASE("stratified patient-level k-fold") {
  std::vector<std::pair<std::string, int>> patients;
  for (int i = 0; i < 24; ++i) patients.emplace_back("N" + std::to_string(i), 0);
  for (int i = 0; i < 12; ++i) patients.emplace_back("P" + std::to_string(i), 1);

  std::vector<FoldSplit> folds = kfold_split(patients, 4, 0.15, 3);
  REQUIRE(folds.size() == 4);

  std::map<std::string, int> label_of;
  for (const auto& [id, l] : patients) label_of[id] = l;

  std::multiset<std::string> tested;
  for (const FoldSplit& f : folds) {
    // disjoint within the fold
    std::set<std::string> seen;
    for (const auto* part : {&f.train, &f.val, &f.test})
      for (const std::string& id : *part) CHECK(seen.insert(id).second);
    CHECK(seen.size() == patients.size());
    CHECK(!f.val.empty());

    // stratification: per-class test prevalence within one patient of fair
    int test_pos = 0;
    for (const std::string& id : f.test) test_pos += label_of[id];
    CHECK(std::abs(test_pos - 3) <= 1);
    CHECK(std::abs(static_cast<int>(f.test.size()) - 9) <= 2);
    for (const std::string& id : f.test) tested.insert(id);
  }
  // every patient tests exactly once across the folds
  CHECK(tested.size() == patients.size());
  for (const auto& [id, l] : patients) CHECK(tested.count(id) == 1);

  // seed reproducibility
  std::vector<FoldSplit> again = kfold_split(patients, 4, 0.15, 3);
  for (std::size_t f = 0; f < 4; ++f) {
    CHECK(again[f].train == folds[f].train);
    CHECK(again[f].val == folds[f].val);
    CHECK(again[f].test == folds[f].test);
  }

  // too few patients of one class
  std::vector<std::pair<std::string, int>> thin{{"a", 0}, {"b", 0}, {"c", 0}, {"d", 0}, {"e", 1}};
  CHECK_THROWS_AS(kfold_split(thin, 4, 0.15, 0), MetricError);
}

TEST_CASE("cv summary") {
  MeanSd ms = cv_summary({0.8, 1.0});
  CHECK(ms.mean == doctest::Approx(0.9).epsilon(1e-12));
  CHECK(ms.sd == doctest::Approx(std::sqrt(0.02)).epsilon(1e-9));  // 0.14142...

  MeanSd flat = cv_summary({0.7, 0.7, 0.7, 0.7});
  CHECK(flat.mean == doctest::Approx(0.7));
  CHECK(flat.sd == 0.0);

  CHECK_THROWS_AS(cv_summary({0.5}), MetricError);
  CHECK_THROWS_AS(cv_summary({}), MetricError);
}
