#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "model.hpp"
#include "training.hpp"

namespace attenlab {

// Cell (i, j) counts samples whose actual class is i and predicted class j.
struct ConfusionMatrix {
  int classes = 0;
  std::vector<int64_t> counts;

  int64_t at(int actual, int predicted) const {
    return counts[static_cast<size_t>(actual) * classes + predicted];
  }
  int64_t total() const;
  int64_t trace() const;
  double accuracy() const { return static_cast<double>(trace()) / static_cast<double>(total()); }
};

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& actual,
                          int classes);

struct BinaryCounts {
  int64_t tp = 0, tn = 0, fp = 0, fn = 0;
};

// Rates with zero denominators are reported as absent, never coerced to 0.
struct BinaryMetrics {
  std::optional<double> accuracy, sensitivity, specificity, ppv, npv;
};

BinaryMetrics binary_metrics(const BinaryCounts& c);

// Four-class probabilities (NE, EP, EH, EA) to (p_benign, p_malignant):
// benign sums the three benign subclasses, EA alone is malignant.
std::pair<double, double> aggregate_binary(const std::array<double, 4>& probs);

struct RocPoint {
  double threshold = 0.0;  // +inf sentinel opens the curve at (0, 0)
  double fpr = 0.0;
  double tpr = 0.0;
};

// Points at every distinct score threshold, descending. Requires both
// classes present. The curve is a monotone staircase from (0,0) to (1,1).
std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels);

// Trapezoidal area under roc_curve; with ties this equals the Mann-Whitney
// estimator P(s+ > s-) + 0.5 P(s+ = s-).
double auc(const std::vector<double>& scores, const std::vector<int>& labels);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta_reg(double a, double b, double x);

// Exact binomial interval from incomplete-beta inversion; the lower bound is
// 0 when successes == 0 and the upper bound 1 when successes == trials.
std::pair<double, double> clopper_pearson(int64_t successes, int64_t trials,
                                          double confidence = 0.95);

// Seeded shuffle then split; fold sizes differ by at most one and the folds
// partition [0, n).
std::vector<std::vector<int>> kfold_indices(int n, int k, uint64_t seed);

// Optional class-stratified variant (off by default everywhere).
std::vector<std::vector<int>> kfold_stratified(const std::vector<int>& labels, int k,
                                               uint64_t seed);

struct EvalMetrics {
  int samples = 0;
  ConfusionMatrix confusion4;
  double four_accuracy = 0.0;
  std::pair<double, double> four_ci{0.0, 0.0};
  BinaryCounts counts;
  BinaryMetrics binary;
  std::pair<double, double> binary_ci{0.0, 0.0};  // on binary accuracy
  double auc_value = 0.0;
  std::vector<RocPoint> roc;
};

// Infer-mode evaluation: four-class argmax metrics plus the aggregated
// binary task at the 0.5 malignancy threshold.
EvalMetrics evaluate_model(Model& model, const Dataset& dataset, int batch_size = 32);

struct FoldMetrics {
  int fold = 0;  // 1-based
  EvalMetrics metrics;
};

struct CrossValReport {
  std::vector<FoldMetrics> folds;
  std::vector<std::string> warnings;
};

// Per fold: fresh model (fold-derived seeds), train on the remaining folds,
// evaluate on the held-out one. jobs > 1 runs folds concurrently; the report
// ordering and contents do not depend on scheduling.
CrossValReport cross_validate(const Dataset& dataset, const ModelConfig& model_config,
                              const TrainConfig& train_config, int folds, uint64_t seed,
                              int jobs = 1, bool stratified = false);

// fold,task,accuracy,sensitivity,specificity,ppv,npv,auc,ci_lo,ci_hi with
// mean/sd footer rows; absent metrics print as "undefined".
void write_metrics_csv(const CrossValReport& report, const std::string& path);
void write_eval_csv(const EvalMetrics& metrics, bool include_binary, const std::string& path);
void write_roc_csv(const std::vector<RocPoint>& roc, const std::string& path);

}  // namespace attenlab
