#include <cmath>
#include <vector>

#include "doctest.h"
#include "pruneforge/metrics.hpp"

using namespace pruneforge;

TEST_CASE("accuracy and kappa of a two-class confusion matrix") {
  const ConfusionMatrix cm = ConfusionMatrix::from_rows({{40, 10}, {20, 30}});
  CHECK(cm.total() == 100);
  CHECK(cm.row_sum(0) == 50);
  CHECK(cm.column_sum(0) == 60);
  CHECK(std::abs(accuracy(cm) - 0.7) <= 1e-12);
  // p_o = 0.7, p_e = (50*60 + 50*40) / 100^2 = 0.5.
  CHECK(std::abs(cohen_kappa(cm) - 0.4) <= 1e-9);
}

TEST_CASE("kappa edge cases") {
  CHECK(cohen_kappa(ConfusionMatrix::from_rows({{10, 0}, {0, 10}})) == doctest::Approx(1.0));
  // Chance agreement is certain: defined as 0 rather than 0/0.
  CHECK(cohen_kappa(ConfusionMatrix::from_rows({{10, 0}, {0, 0}})) == 0.0);
  // Systematically wrong predictions give negative kappa.
  CHECK(cohen_kappa(ConfusionMatrix::from_rows({{0, 10}, {10, 0}})) == doctest::Approx(-1.0));
}

TEST_CASE("confusion matrices from predictions") {
  const std::vector<int> truth{0, 1, 2, 2};
  const std::vector<int> pred{0, 2, 2, 1};
  const ConfusionMatrix cm = ConfusionMatrix::from_predictions(3, truth, pred);
  CHECK(cm.at(1, 2) == 1);
  CHECK(cm.at(2, 2) == 1);
  CHECK(accuracy(cm) == doctest::Approx(0.5));
  CHECK_THROWS_AS(ConfusionMatrix::from_predictions(3, truth, std::vector<int>{0}), Error);
  ConfusionMatrix m(2);
  CHECK_THROWS_AS(m.add(2, 0), Error);
  CHECK_THROWS_AS(ConfusionMatrix::from_rows({{1, 2}, {3}}), Error);
}

TEST_CASE("mean and population standard deviation format as mean ± std") {
  const std::vector<double> v{1.0, 2.0, 3.0};
  const MeanStd ms = mean_std(v);
  CHECK(ms.mean == doctest::Approx(2.0));
  CHECK(ms.stddev == doctest::Approx(std::sqrt(2.0 / 3.0)));
  CHECK(ms.format() == "2.00 ± 0.82");
  CHECK(ms.format(3) == "2.000 ± 0.816");
}

TEST_CASE("split aggregation reports accuracy and kappa in percent") {
  const std::vector<SplitMetrics> splits{{0.9, 0.8, 70.0, 50.0}, {0.8, 0.6, 72.0, 50.0}};
  const EvaluationReport r = aggregate_splits(splits);
  CHECK(r.accuracy.mean == doctest::Approx(85.0));
  CHECK(r.accuracy.stddev == doctest::Approx(5.0));
  CHECK(r.kappa.mean == doctest::Approx(70.0));
  CHECK(r.gflops_reduction.mean == doctest::Approx(71.0));
  CHECK(r.kernel_reduction.stddev == 0.0);
  CHECK(r.table("oPPR").find("85.00 ± 5.00") != std::string::npos);
  const nlohmann::json j = r;
  CHECK(j.at("accuracy_percent").at("text") == "85.00 ± 5.00");
  CHECK(j.at("splits").size() == 2);
  CHECK_THROWS_AS(aggregate_splits(std::vector<SplitMetrics>{}), Error);
}

TEST_CASE("split metrics JSON round-trips") {
  const SplitMetrics m{0.75, 0.5, 60.0, 40.0};
  const nlohmann::json j = m;
  const SplitMetrics back = j.get<SplitMetrics>();
  CHECK(back.accuracy == 0.75);
  CHECK(back.kernel_reduction == 40.0);
}

TEST_CASE("reduction percentages compare two architectures") {
  const ArchitectureSpec spec = preset_spec("tinyvgg", {1, 16, 16}, 3);
  const ReductionPercentages none = reduction_percentages(spec, spec);
  CHECK(none.kernel_reduction == 0.0);
  CHECK(none.gflops_reduction == 0.0);
  const ModelState pruned = prune_layer(build_model(spec, 1), KernelSet::make(1, {0, 1, 2, 3}));
  const ReductionPercentages r = reduction_percentages(spec, pruned.spec);
  CHECK(r.kernel_reduction == doctest::Approx(100.0 * 4 / 48));
  // Layer 1 halves (36864 -> 18432) and layer 2 loses half its inputs (294912 -> 147456).
  CHECK(r.gflops_reduction == doctest::Approx(100.0 * (18432 + 147456) / 790720.0));
  CHECK(r.conv_gflops_reduction == doctest::Approx(100.0 * (18432 + 147456) / 774144.0));
}
