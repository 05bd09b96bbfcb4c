#include "evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

#include "error.hpp"
#include "layers.hpp"

namespace attenlab {

int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), int64_t{0});
}

int64_t ConfusionMatrix::trace() const {
  int64_t t = 0;
  for (int i = 0; i < classes; ++i) t += at(i, i);
  return t;
}

ConfusionMatrix confusion(const std::vector<int>& predicted, const std::vector<int>& actual,
                          int classes) {
  if (predicted.size() != actual.size()) {
    throw ContractError("confusion: " + std::to_string(predicted.size()) + " predictions vs " +
                        std::to_string(actual.size()) + " actual labels");
  }
  if (classes < 2) throw ContractError("confusion: needs >= 2 classes");
  ConfusionMatrix m;
  m.classes = classes;
  m.counts.assign(static_cast<size_t>(classes) * classes, 0);
  for (size_t i = 0; i < actual.size(); ++i) {
    if (actual[i] < 0 || actual[i] >= classes || predicted[i] < 0 || predicted[i] >= classes) {
      throw ContractError("confusion: label outside 0.." + std::to_string(classes - 1) +
                          " at sample " + std::to_string(i));
    }
    m.counts[static_cast<size_t>(actual[i]) * classes + predicted[i]] += 1;
  }
  return m;
}

BinaryMetrics binary_metrics(const BinaryCounts& c) {
  if (c.tp < 0 || c.tn < 0 || c.fp < 0 || c.fn < 0) {
    throw ContractError("binary_metrics: negative counts");
  }
  BinaryMetrics m;
  auto rate = [](int64_t num, int64_t denom) -> std::optional<double> {
    if (denom == 0) return std::nullopt;
    return static_cast<double>(num) / static_cast<double>(denom);
  };
  m.accuracy = rate(c.tp + c.tn, c.tp + c.fp + c.tn + c.fn);
  m.sensitivity = rate(c.tp, c.tp + c.fn);
  m.specificity = rate(c.tn, c.tn + c.fp);
  m.ppv = rate(c.tp, c.tp + c.fp);
  m.npv = rate(c.tn, c.tn + c.fn);
  return m;
}

std::pair<double, double> aggregate_binary(const std::array<double, 4>& probs) {
  double total = 0.0;
  for (double p : probs) total += p;
  if (std::fabs(total - 1.0) > 1e-6) {
    throw ContractError("aggregate_binary: probabilities sum to " + std::to_string(total));
  }
  const double malignant = probs[kMalignantClass];
  return {probs[0] + probs[1] + probs[2], malignant};
}

std::vector<RocPoint> roc_curve(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  if (scores.size() != labels.size()) {
    throw ContractError("roc_curve: score/label count mismatch");
  }
  int64_t positives = 0, negatives = 0;
  for (int l : labels) {
    if (l != 0 && l != 1) throw ContractError("roc_curve: labels must be 0/1");
    (l ? positives : negatives) += 1;
  }
  if (positives == 0 || negatives == 0) {
    throw ContractError("roc_curve: both classes must be present");
  }

  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> points;
  points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  int64_t tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      (labels[order[i]] ? tp : fp) += 1;
      ++i;
    }
    points.push_back({threshold, static_cast<double>(fp) / negatives,
                      static_cast<double>(tp) / positives});
  }
  return points;
}

double auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  const std::vector<RocPoint> points = roc_curve(scores, labels);
  double area = 0.0;
  for (size_t i = 1; i < points.size(); ++i) {
    area += (points[i].fpr - points[i - 1].fpr) * (points[i].tpr + points[i - 1].tpr) * 0.5;
  }
  return area;
}

namespace {

// Lentz continued fraction for the incomplete beta.
double beta_cf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kTiny = 1e-300;
  constexpr double kEps = 1e-15;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace

double incomplete_beta_reg(double a, double b, double x) {
  if (a <= 0.0 || b <= 0.0) throw ContractError("incomplete_beta: a, b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                          a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * beta_cf(a, b, x) / a;
  }
  return 1.0 - std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                        b * std::log1p(-x) + a * std::log(x)) *
                   beta_cf(b, a, 1.0 - x) / b;
}

namespace {

// Inverse of I_x(a, b) in x by bisection; the integrand is monotone.
double incomplete_beta_inv(double a, double b, double p) {
  double lo = 0.0, hi = 1.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (incomplete_beta_reg(a, b, mid) < p) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo < 1e-15) break;
  }
  return 0.5 * (lo + hi);
}

}  // namespace

std::pair<double, double> clopper_pearson(int64_t successes, int64_t trials, double confidence) {
  if (trials < 1 || successes < 0 || successes > trials) {
    throw ContractError("clopper_pearson: need 0 <= successes <= trials, trials >= 1; got " +
                        std::to_string(successes) + "/" + std::to_string(trials));
  }
  if (confidence <= 0.0 || confidence >= 1.0) {
    throw ContractError("clopper_pearson: confidence must be in (0, 1)");
  }
  const double alpha = 1.0 - confidence;
  const double k = static_cast<double>(successes);
  const double n = static_cast<double>(trials);
  const double lo =
      successes == 0 ? 0.0 : incomplete_beta_inv(k, n - k + 1.0, alpha / 2.0);
  const double hi =
      successes == trials ? 1.0 : incomplete_beta_inv(k + 1.0, n - k, 1.0 - alpha / 2.0);
  return {lo, hi};
}

std::vector<std::vector<int>> kfold_indices(int n, int k, uint64_t seed) {
  if (k < 2) throw ContractError("kfold: needs k >= 2");
  if (n < k) throw ContractError("kfold: n=" + std::to_string(n) + " < k=" + std::to_string(k));
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(seed, 0x6b666f6cULL));
  rng.shuffle(order);
  std::vector<std::vector<int>> folds(k);
  const int base = n / k, rem = n % k;
  int at = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < rem ? 1 : 0);
    folds[f].assign(order.begin() + at, order.begin() + at + size);
    at += size;
  }
  return folds;
}

std::vector<std::vector<int>> kfold_stratified(const std::vector<int>& labels, int k,
                                               uint64_t seed) {
  const int n = static_cast<int>(labels.size());
  if (k < 2) throw ContractError("kfold: needs k >= 2");
  if (n < k) throw ContractError("kfold: n < k");
  int max_label = 0;
  for (int l : labels) max_label = std::max(max_label, l);
  Rng rng(derive_seed(seed, 0x6b737472ULL));
  std::vector<std::vector<int>> folds(k);
  int next_fold = 0;
  for (int cls = 0; cls <= max_label; ++cls) {
    std::vector<int> members;
    for (int i = 0; i < n; ++i) {
      if (labels[i] == cls) members.push_back(i);
    }
    rng.shuffle(members);
    for (int idx : members) {
      folds[next_fold].push_back(idx);
      next_fold = (next_fold + 1) % k;
    }
  }
  return folds;
}

EvalMetrics evaluate_model(Model& model, const Dataset& dataset, int batch_size) {
  if (dataset.images.empty()) throw InputError("evaluate: empty dataset");
  if (batch_size < 1) throw ContractError("evaluate: batch_size must be >= 1");
  const int n = static_cast<int>(dataset.images.size());
  const int size = model.config.input_size;

  std::vector<int> predicted4(n), actual4(n);
  std::vector<double> malignant_scores(n);
  NoGradGuard no_grad;
  for (int start = 0; start < n; start += batch_size) {
    const int bs = std::min(batch_size, n - start);
    std::vector<double> buffer(static_cast<size_t>(bs) * size * size * 3);
    for (int b = 0; b < bs; ++b) {
      const Tensor pre = preprocess(dataset.images[start + b].image, size);
      std::copy(pre.values().begin(), pre.values().end(),
                buffer.begin() + static_cast<int64_t>(b) * size * size * 3);
    }
    Tensor batch = Tensor::from_data({bs, size, size, 3}, std::move(buffer));
    ForwardResult r = forward(model, batch, Mode::kInfer);
    for (int b = 0; b < bs; ++b) {
      int arg = 0;
      double best = -1.0;
      std::array<double, 4> row{};
      for (int k = 0; k < model.config.classes; ++k) {
        const double p = r.probs.at({b, k});
        if (k < 4) row[k] = p;
        if (p > best) {
          best = p;
          arg = k;
        }
      }
      predicted4[start + b] = arg;
      actual4[start + b] = dataset.images[start + b].label;
      if (model.config.classes == 4) {
        malignant_scores[start + b] = aggregate_binary(row).second;
      }
    }
  }

  EvalMetrics out;
  out.samples = n;
  out.confusion4 = confusion(predicted4, actual4, model.config.classes);
  out.four_accuracy = out.confusion4.accuracy();
  out.four_ci = clopper_pearson(out.confusion4.trace(), n);

  if (model.config.classes == 4) {
    std::vector<int> binary_labels(n);
    for (int i = 0; i < n; ++i) binary_labels[i] = actual4[i] == kMalignantClass ? 1 : 0;
    for (int i = 0; i < n; ++i) {
      const bool pred_malignant = malignant_scores[i] > 0.5;
      const bool is_malignant = binary_labels[i] == 1;
      if (pred_malignant && is_malignant) out.counts.tp += 1;
      else if (pred_malignant && !is_malignant) out.counts.fp += 1;
      else if (!pred_malignant && is_malignant) out.counts.fn += 1;
      else out.counts.tn += 1;
    }
    out.binary = binary_metrics(out.counts);
    out.binary_ci = clopper_pearson(out.counts.tp + out.counts.tn, n);
    bool both = false;
    int first = binary_labels[0];
    for (int l : binary_labels) both = both || l != first;
    if (both) {
      out.roc = roc_curve(malignant_scores, binary_labels);
      out.auc_value = auc(malignant_scores, binary_labels);
    } else {
      out.auc_value = std::numeric_limits<double>::quiet_NaN();
    }
  }
  return out;
}

CrossValReport cross_validate(const Dataset& dataset, const ModelConfig& model_config,
                              const TrainConfig& train_config, int folds, uint64_t seed,
                              int jobs, bool stratified) {
  const int n = static_cast<int>(dataset.images.size());
  std::vector<int> labels(n);
  std::vector<bool> class_seen(model_config.classes, false);
  for (int i = 0; i < n; ++i) {
    labels[i] = dataset.images[i].label;
    if (labels[i] >= 0 && labels[i] < model_config.classes) class_seen[labels[i]] = true;
  }
  for (int c = 0; c < model_config.classes; ++c) {
    if (!class_seen[c]) {
      throw ContractError("cross_validate: class " + std::to_string(c) +
                          " absent from the dataset");
    }
  }

  const std::vector<std::vector<int>> partition =
      stratified ? kfold_stratified(labels, folds, seed) : kfold_indices(n, folds, seed);

  CrossValReport report;
  report.folds.resize(folds);
  std::vector<std::vector<std::string>> fold_warnings(folds);

  auto run_fold = [&](int f) {
    std::vector<char> in_test(n, 0);
    for (int idx : partition[f]) in_test[idx] = 1;
    Dataset train_split, test_split;
    train_split.classes = dataset.classes;
    test_split.classes = dataset.classes;
    train_split.provenance = dataset.provenance;
    test_split.provenance = dataset.provenance;
    for (int i = 0; i < n; ++i) {
      (in_test[i] ? test_split : train_split).images.push_back(dataset.images[i]);
    }

    std::vector<bool> seen(model_config.classes, false);
    for (const LabeledImage& li : train_split.images) seen[li.label] = true;
    for (int c = 0; c < model_config.classes; ++c) {
      if (!seen[c]) {
        fold_warnings[f].push_back("fold " + std::to_string(f + 1) + ": class " +
                                   dataset.classes[c] + " absent from the training split");
      }
    }

    ModelConfig mc = model_config;
    mc.seed = derive_seed(model_config.seed, 0x666f6c64ULL + f);
    TrainConfig tc = train_config;
    tc.seed = derive_seed(train_config.seed, 0x74666f6cULL + f);
    Model model = build_model(mc);
    train_model(model, train_split, tc);
    report.folds[f].fold = f + 1;
    report.folds[f].metrics = evaluate_model(model, test_split, train_config.batch_size);
  };

  const int workers = std::max(1, std::min(jobs, folds));
  if (workers == 1) {
    for (int f = 0; f < folds; ++f) run_fold(f);
  } else {
    std::atomic<int> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (;;) {
          const int f = next.fetch_add(1);
          if (f >= folds) return;
          run_fold(f);
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& w : fold_warnings) {
    report.warnings.insert(report.warnings.end(), w.begin(), w.end());
  }
  return report;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v.has_value() || !std::isfinite(*v)) return "undefined";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

std::optional<double> opt_of(double v) {
  if (std::isfinite(v)) return v;
  return std::nullopt;
}

struct MetricRow {
  std::string fold;
  std::string task;
  std::optional<double> accuracy, sensitivity, specificity, ppv, npv, auc_v, ci_lo, ci_hi;
};

void write_rows(std::ofstream& out, const std::vector<MetricRow>& rows) {
  out << "fold,task,accuracy,sensitivity,specificity,ppv,npv,auc,ci_lo,ci_hi\n";
  for (const MetricRow& r : rows) {
    out << r.fold << ',' << r.task << ',' << fmt_opt(r.accuracy) << ',' << fmt_opt(r.sensitivity)
        << ',' << fmt_opt(r.specificity) << ',' << fmt_opt(r.ppv) << ',' << fmt_opt(r.npv) << ','
        << fmt_opt(r.auc_v) << ',' << fmt_opt(r.ci_lo) << ',' << fmt_opt(r.ci_hi) << '\n';
  }
}

MetricRow fourclass_row(const std::string& fold, const EvalMetrics& m) {
  MetricRow r;
  r.fold = fold;
  r.task = "fourclass";
  r.accuracy = m.four_accuracy;
  r.ci_lo = m.four_ci.first;
  r.ci_hi = m.four_ci.second;
  return r;
}

MetricRow binary_row(const std::string& fold, const EvalMetrics& m) {
  MetricRow r;
  r.fold = fold;
  r.task = "binary";
  r.accuracy = m.binary.accuracy;
  r.sensitivity = m.binary.sensitivity;
  r.specificity = m.binary.specificity;
  r.ppv = m.binary.ppv;
  r.npv = m.binary.npv;
  r.auc_v = opt_of(m.auc_value);
  r.ci_lo = m.binary_ci.first;
  r.ci_hi = m.binary_ci.second;
  return r;
}

// mean and sample sd over the defined entries
std::pair<std::optional<double>, std::optional<double>> mean_sd(
    const std::vector<std::optional<double>>& values) {
  std::vector<double> defined;
  for (const auto& v : values) {
    if (v.has_value()) defined.push_back(*v);
  }
  if (defined.empty()) return {std::nullopt, std::nullopt};
  double mean = 0.0;
  for (double v : defined) mean += v;
  mean /= static_cast<double>(defined.size());
  if (defined.size() < 2) return {mean, std::nullopt};
  double ss = 0.0;
  for (double v : defined) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(defined.size() - 1))};
}

void append_aggregates(std::vector<MetricRow>& rows, const std::string& task,
                       const std::vector<MetricRow>& fold_rows) {
  auto collect = [&](auto member) {
    std::vector<std::optional<double>> vals;
    for (const MetricRow& r : fold_rows) vals.push_back(r.*member);
    return mean_sd(vals);
  };
  MetricRow mean_row, sd_row;
  mean_row.fold = "mean";
  sd_row.fold = "sd";
  mean_row.task = sd_row.task = task;
  std::tie(mean_row.accuracy, sd_row.accuracy) = collect(&MetricRow::accuracy);
  std::tie(mean_row.sensitivity, sd_row.sensitivity) = collect(&MetricRow::sensitivity);
  std::tie(mean_row.specificity, sd_row.specificity) = collect(&MetricRow::specificity);
  std::tie(mean_row.ppv, sd_row.ppv) = collect(&MetricRow::ppv);
  std::tie(mean_row.npv, sd_row.npv) = collect(&MetricRow::npv);
  std::tie(mean_row.auc_v, sd_row.auc_v) = collect(&MetricRow::auc_v);
  rows.push_back(mean_row);
  rows.push_back(sd_row);
}

}  // namespace

void write_metrics_csv(const CrossValReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics csv " + path);
  std::vector<MetricRow> four_rows, bin_rows;
  for (const FoldMetrics& f : report.folds) {
    four_rows.push_back(fourclass_row(std::to_string(f.fold), f.metrics));
    bin_rows.push_back(binary_row(std::to_string(f.fold), f.metrics));
  }
  std::vector<MetricRow> rows;
  for (const auto& r : four_rows) rows.push_back(r);
  for (const auto& r : bin_rows) rows.push_back(r);
  append_aggregates(rows, "fourclass", four_rows);
  append_aggregates(rows, "binary", bin_rows);
  write_rows(out, rows);
  if (!out) throw IoError("short write to metrics csv " + path);
}

void write_eval_csv(const EvalMetrics& metrics, bool include_binary, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write metrics csv " + path);
  std::vector<MetricRow> rows{fourclass_row("0", metrics)};
  if (include_binary) rows.push_back(binary_row("0", metrics));
  write_rows(out, rows);
  if (!out) throw IoError("short write to metrics csv " + path);
}

void write_roc_csv(const std::vector<RocPoint>& roc, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write roc csv " + path);
  out << "threshold,fpr,tpr\n";
  char line[96];
  for (const RocPoint& p : roc) {
    std::snprintf(line, sizeof line, "%.9g,%.6f,%.6f\n", p.threshold, p.fpr, p.tpr);
    out << line;
  }
  if (!out) throw IoError("short write to roc csv " + path);
}

}  // namespace attenlab
