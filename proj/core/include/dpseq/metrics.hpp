#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dpseq {

class MetricError : public std::runtime_error {
 public:
  explicit MetricError(const std::string& what) : std::runtime_error(what) {}
};

struct PatientScore {
  std::string patient_id;
  double score = 0.0;  // mean tile probability, in [0,1]
  int label = 0;       // {0,1}
  std::size_t n_tiles = 0;
};

// arithmetic mean of tile-level probabilities
double aggregate_patient(const std::vector<double>& tile_scores);

// Mann-Whitney statistic: P(score_pos > score_neg), ties counted half.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

// average precision over descending-score thresholds, ties grouped
double auprc(const std::vector<double>& scores, const std::vector<int>& labels);

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t skipped = 0;  // resamples dropped after retries for lacking both classes
};

using Metric = std::function<double(const std::vector<double>&, const std::vector<int>&)>;

// percentile bootstrap (2.5 / 97.5), resampling patients with replacement
BootstrapCi bootstrap_ci(const std::vector<double>& scores, const std::vector<int>& labels,
                         const Metric& metric, std::size_t n = 1000, std::uint64_t seed = 0);

struct FoldSplit {
  std::vector<std::string> train, val, test;
};

// Stratified patient-level k-fold; every patient tests exactly once, the
// remaining folds split train/val at (1-val_fraction):val_fraction per class.
std::vector<FoldSplit> kfold_split(const std::vector<std::pair<std::string, int>>& patients,
                                   std::size_t k = 4, double val_fraction = 0.15,
                                   std::uint64_t seed = 0);

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;  // sample SD, n-1 denominator
};

MeanSd cv_summary(const std::vector<double>& fold_values);

struct CurvePoint {
  double x = 0.0;  // fpr / recall
  double y = 0.0;  // tpr / precision
};

std::vector<CurvePoint> roc_curve(const std::vector<double>& scores,
                                  const std::vector<int>& labels);
std::vector<CurvePoint> pr_curve(const std::vector<double>& scores,
                                 const std::vector<int>& labels);

}  // namespace dpseq
