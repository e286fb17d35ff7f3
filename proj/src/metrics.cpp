#include "pruneforge/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

namespace pruneforge {

ConfusionMatrix::ConfusionMatrix(std::size_t classes) : classes_(classes), counts_(classes * classes, 0) {
  if (classes == 0) throw Error("confusion matrix needs at least one class");
}

ConfusionMatrix ConfusionMatrix::from_rows(const std::vector<std::vector<std::uint64_t>>& rows) {
  ConfusionMatrix cm(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw Error("confusion matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) cm.counts_[i * rows.size() + j] = rows[i][j];
  }
  return cm;
}

ConfusionMatrix ConfusionMatrix::from_predictions(std::size_t classes, std::span<const int> truth,
                                                  std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw Error("truth and prediction counts differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

void ConfusionMatrix::add(int truth, int predicted) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= classes_ ||
      static_cast<std::size_t>(predicted) >= classes_) {
    throw Error("confusion matrix class index out of range");
  }
  ++counts_[static_cast<std::size_t>(truth) * classes_ + static_cast<std::size_t>(predicted)];
}

std::uint64_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * classes_ + predicted);
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

std::uint64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::uint64_t t = 0;
  for (std::size_t j = 0; j < classes_; ++j) t += at(truth, j);
  return t;
}

std::uint64_t ConfusionMatrix::column_sum(std::size_t predicted) const {
  std::uint64_t t = 0;
  for (std::size_t i = 0; i < classes_; ++i) t += at(i, predicted);
  return t;
}

double accuracy(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw Error("accuracy of an empty confusion matrix");
  std::uint64_t diag = 0;
  for (std::size_t j = 0; j < cm.classes(); ++j) diag += cm.at(j, j);
  return static_cast<double>(diag) / static_cast<double>(total);
}

double cohen_kappa(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw Error("cohen kappa of an empty confusion matrix");
  const double n = static_cast<double>(total);
  const double observed = accuracy(cm);
  double expected = 0.0;
  for (std::size_t j = 0; j < cm.classes(); ++j) {
    expected += static_cast<double>(cm.row_sum(j)) * static_cast<double>(cm.column_sum(j));
  }
  expected /= n * n;
  if (expected == 1.0) return 0.0;
  return (observed - expected) / (1.0 - expected);
}

ReductionPercentages reduction_percentages(const ArchitectureSpec& original, const ArchitectureSpec& pruned) {
  if (original.conv_count() != pruned.conv_count()) {
    throw Error("reduction percentages need equal conv layer counts");
  }
  ReductionPercentages r;
  r.kernel_reduction = 100.0 * (1.0 - static_cast<double>(pruned.total_kernels()) /
                                          static_cast<double>(original.total_kernels()));
  const auto a = flops(original), b = flops(pruned);
  r.gflops_reduction = 100.0 * (1.0 - static_cast<double>(b.total) / static_cast<double>(a.total));
  r.conv_gflops_reduction =
      100.0 * (1.0 - static_cast<double>(b.conv_total) / static_cast<double>(a.conv_total));
  return r;
}

MeanStd mean_std(std::span<const double> values) {
  if (values.empty()) throw Error("mean_std of no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - mean) * (v - mean);
  return {mean, std::sqrt(sq / static_cast<double>(values.size()))};
}

std::string MeanStd::format(int decimals) const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f ± %.*f", decimals, mean, decimals, stddev);
  return buf;
}

EvaluationReport aggregate_splits(std::span<const SplitMetrics> splits) {
  if (splits.empty()) throw Error("aggregate_splits needs at least one split");
  std::vector<double> acc, kappa, gflops, kernels;
  for (const auto& s : splits) {
    acc.push_back(100.0 * s.accuracy);
    kappa.push_back(100.0 * s.kappa);
    gflops.push_back(s.gflops_reduction);
    kernels.push_back(s.kernel_reduction);
  }
  EvaluationReport r;
  r.accuracy = mean_std(acc);
  r.kappa = mean_std(kappa);
  r.gflops_reduction = mean_std(gflops);
  r.kernel_reduction = mean_std(kernels);
  r.splits.assign(splits.begin(), splits.end());
  return r;
}

std::string EvaluationReport::table(const std::string& label) const {
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof buf, "%-10s %-18s %-18s %-10s %-10s\n", "", "Accuracy", "Cohen Kappa",
                "GFLOPs(%)", "Kernels(%)");
  out << buf;
  std::snprintf(buf, sizeof buf, "%-10s %-18s %-18s %-10.2f %-10.2f\n", label.c_str(),
                accuracy.format().c_str(), kappa.format().c_str(), gflops_reduction.mean,
                kernel_reduction.mean);
  out << buf;
  return out.str();
}

void to_json(nlohmann::json& j, const SplitMetrics& m) {
  j = {{"accuracy", m.accuracy},
       {"kappa", m.kappa},
       {"gflops_reduction", m.gflops_reduction},
       {"kernel_reduction", m.kernel_reduction}};
}

void from_json(const nlohmann::json& j, SplitMetrics& m) {
  m.accuracy = j.at("accuracy").get<double>();
  m.kappa = j.at("kappa").get<double>();
  m.gflops_reduction = j.at("gflops_reduction").get<double>();
  m.kernel_reduction = j.at("kernel_reduction").get<double>();
}

void to_json(nlohmann::json& j, const EvaluationReport& r) {
  auto ms = [](const MeanStd& v) {
    return nlohmann::json{{"mean", v.mean}, {"std", v.stddev}, {"text", v.format()}};
  };
  j = {{"accuracy_percent", ms(r.accuracy)},
       {"kappa_percent", ms(r.kappa)},
       {"gflops_reduction_percent", ms(r.gflops_reduction)},
       {"kernel_reduction_percent", ms(r.kernel_reduction)},
       {"splits", r.splits},
       {"flops_convention", FlopsReport::convention}};
}

}  // namespace pruneforge
