#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pruneforge/model.hpp"

namespace pruneforge {

/// c x c counts; rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes);
  static ConfusionMatrix from_rows(const std::vector<std::vector<std::uint64_t>>& rows);
  static ConfusionMatrix from_predictions(std::size_t classes, std::span<const int> truth,
                                          std::span<const int> predicted);

  void add(int truth, int predicted);
  std::size_t classes() const { return classes_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const;
  std::uint64_t total() const;
  std::uint64_t row_sum(std::size_t truth) const;
  std::uint64_t column_sum(std::size_t predicted) const;

 private:
  std::size_t classes_;
  std::vector<std::uint64_t> counts_;
};

double accuracy(const ConfusionMatrix& cm);
/// (p_o - p_e) / (1 - p_e); 0 when p_e == 1.
double cohen_kappa(const ConfusionMatrix& cm);

struct ReductionPercentages {
  double kernel_reduction = 0.0;  // percent
  double gflops_reduction = 0.0;  // percent, conv + classifier
  double conv_gflops_reduction = 0.0;
};

ReductionPercentages reduction_percentages(const ArchitectureSpec& original, const ArchitectureSpec& pruned);

struct SplitMetrics {
  double accuracy = 0.0;  // fraction
  double kappa = 0.0;
  double gflops_reduction = 0.0;  // percent
  double kernel_reduction = 0.0;  // percent
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // population
  std::string format(int decimals = 2) const;
};

MeanStd mean_std(std::span<const double> values);

struct EvaluationReport {
  MeanStd accuracy;  // percent
  MeanStd kappa;     // percent
  MeanStd gflops_reduction;
  MeanStd kernel_reduction;
  std::vector<SplitMetrics> splits;

  std::string table(const std::string& label) const;
};

void to_json(nlohmann::json& j, const SplitMetrics& m);
void from_json(const nlohmann::json& j, SplitMetrics& m);
void to_json(nlohmann::json& j, const EvaluationReport& r);

/// Aggregates per-split values as mean +- population standard deviation.
/// Accuracy and kappa are reported in percent.
EvaluationReport aggregate_splits(std::span<const SplitMetrics> splits);

}  // namespace pruneforge
