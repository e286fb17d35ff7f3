// Acceptance suite: one PASS/FAIL line per criterion, followed by a summary.
// Exits non-zero when any criterion fails.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "pruneforge/analysis.hpp"
#include "pruneforge/defaults.hpp"
#include "pruneforge/metrics.hpp"
#include "pruneforge/model.hpp"

using namespace pruneforge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

template <typename... Args>
std::string buf(const char* fmt, Args... args) {
  char out[512];
  std::snprintf(out, sizeof out, fmt, args...);
  return out;
}

void criterion(const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("threw: ") + e.what()};
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = budget_seconds <= 0.0 || seconds < budget_seconds;
  const bool pass = o.pass && in_time;
  if (!pass) ++failures;
  std::string timing = budget_seconds > 0.0 ? buf("%.1fs, budget %.0fs", seconds, budget_seconds)
                                            : buf("%.1fs", seconds);
  std::printf("%s %-28s %s [%s]\n", pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), timing.c_str());
  std::fflush(stdout);
}

// ---- individual criteria ---------------------------------------------------

Outcome flops_reproduction() {
  bool ok = true;
  std::string detail;
  for (const auto& [side, expected] : {std::pair<std::size_t, double>{200, 74.42}, {96, 74.25}}) {
    const ArchitectureSpec spec = preset_spec("vgg16", {3, side, side}, 9);
    const ReductionPercentages r = reduction_percentages(spec, uniformly_pruned_spec(spec, 0.5));
    ok = ok && std::abs(r.gflops_reduction - expected) <= 1.0 && r.kernel_reduction == 50.0;
    detail += buf("%zux%zu: GFLOPs -%.2f%% (target %.2f +- 1.0), kernels -%.2f%%; ", side, side,
                  r.gflops_reduction, expected, r.kernel_reduction);
  }
  detail.resize(detail.size() - 2);
  return {ok, detail};
}

Outcome gradient_suite() {
  const auto checks = oracle::gradient_suite(20, 2024);
  double worst = 0.0;
  std::size_t fewest = SIZE_MAX;
  std::string worst_op;
  for (const auto& c : checks) {
    fewest = std::min(fewest, c.instances);
    if (c.worst_relative_error >= worst) {
      worst = c.worst_relative_error;
      worst_op = c.op;
    }
  }
  const bool ok = fewest >= 20 && worst <= 1e-4;
  return {ok, buf("%zu ops x >=%zu instances, worst relative error %.2e (%s), tolerance 1e-4", checks.size(),
                  fewest, worst, worst_op.c_str())};
}

Outcome surgery() {
  const auto r = oracle::surgery_oracle(50, 99);
  const bool ok = r.cases == 50 && r.last_layer_cases > 0 && r.worst_logit_difference <= 1e-6;
  return {ok, buf("%zu cases (%zu at the last conv layer), worst logit difference %.2e, tolerance 1e-6", r.cases,
                  r.last_layer_cases, r.worst_logit_difference)};
}

Outcome objective_scores() {
  const auto r = oracle::objective_score_oracle(1, 20);
  const bool ok = r.kernels == 48 && r.worst_difference <= 1e-6;
  return {ok, buf("%zu of 48 kernels, worst difference %.2e, tolerance 1e-6", r.kernels, r.worst_difference)};
}

Outcome progressive_contract() {
  const auto c = oracle::progressive_contract(1, 40);
  const double ratio = c.final / c.initial;
  const bool ok = c.epochs == 40 && ratio <= 0.5 && c.deeper_layers_bit_identical;
  return {ok, buf("mean distance at layer 2 %.4f -> %.4f (ratio %.3f, limit 0.5) after %zu epochs; deeper layers %s",
                  c.initial, c.final, ratio, c.epochs,
                  c.deeper_layers_bit_identical ? "bit-identical" : "CHANGED")};
}

Outcome end_to_end(const fs::path& root) {
  std::size_t good = 0;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const fs::path dir = root / ("seed" + std::to_string(seed));
    fs::remove_all(dir);
    const auto c = oracle::compare_campaigns(dir.string(), seed);
    const bool within = c.progressive_accuracy >= c.baseline_accuracy - 0.02;
    const bool beats = c.progressive_accuracy >= c.complete_accuracy;
    good += within && beats;
    std::printf("     seed %llu: baseline %.2f%%, oPPR %.2f%%, oPCR %.2f%%, kernels -%.1f%% -> %s\n",
                static_cast<unsigned long long>(seed), 100 * c.baseline_accuracy, 100 * c.progressive_accuracy,
                100 * c.complete_accuracy, c.kernel_reduction, within && beats ? "ok" : "miss");
    std::fflush(stdout);
    fs::remove_all(dir);
  }
  detail = buf("%zu of 5 seeds with oPPR within 2pp of baseline and >= oPCR (need 4)", good);
  return {good >= 4, detail};
}

Outcome metrics_closed_forms() {
  const ConfusionMatrix cm = ConfusionMatrix::from_rows({{40, 10}, {20, 30}});
  const double kappa = cohen_kappa(cm);
  const double acc = accuracy(cm);
  const std::vector<double> values{1, 2, 3};
  const std::string agg = mean_std(values).format(2);
  const bool ok = std::abs(kappa - 0.4) <= 1e-9 && std::abs(acc - 0.7) <= 1e-12 && agg == "2.00 ± 0.82";
  return {ok, buf("kappa %.10f, accuracy %.4f, aggregate {1,2,3} = %s", kappa, acc, agg.c_str())};
}

std::vector<std::vector<double>> two_clusters(std::size_t per_cluster, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  std::vector<std::vector<double>> out;
  for (std::size_t c = 0; c < 2; ++c) {
    for (std::size_t i = 0; i < per_cluster; ++i) {
      std::vector<double> v(dim);
      for (std::size_t d = 0; d < dim; ++d) v[d] = n(rng) + (c == 0 ? 0.0 : (d < dim / 2 ? 4.0 : -4.0));
      out.push_back(std::move(v));
    }
  }
  return out;
}

double two_nn_purity(const std::vector<std::array<double, 2>>& pts, std::size_t per_cluster) {
  std::size_t agree = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<std::pair<double, std::size_t>> d;
    for (std::size_t j = 0; j < pts.size(); ++j) {
      if (j != i) d.push_back({std::hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1]), j});
    }
    std::partial_sort(d.begin(), d.begin() + 2, d.end());
    for (std::size_t k = 0; k < 2; ++k) agree += (d[k].second / per_cluster) == (i / per_cluster);
  }
  return static_cast<double>(agree) / static_cast<double>(2 * pts.size());
}

double worst_kl_rise(const TsneResult& r) {
  double worst = 0.0;
  for (std::size_t i = kExaggerationIterations + 1; i < r.kl_trace.size(); ++i) {
    worst = std::max(worst, r.kl_trace[i] - r.kl_trace[i - 1]);
  }
  return worst;
}

Outcome tsne_small() {
  const auto v = two_clusters(100, 64, 11);
  const TsneParams params{30.0, 1000, 7};
  const TsneResult a = tsne(v, params);
  const TsneResult b = tsne(v, params);
  const bool deterministic = a.points == b.points && a.kl_trace == b.kl_trace;
  const double purity = two_nn_purity(a.points, 100);
  const double rise = worst_kl_rise(a);
  const bool ok = deterministic && purity >= 0.9 && rise <= 1e-3;
  return {ok, buf("200 points (run twice): %s, 2-NN purity %.3f (need 0.9), worst KL rise after %zu %.2e (limit 1e-3)",
                  deterministic ? "deterministic" : "NOT deterministic", purity, kExaggerationIterations, rise)};
}

Outcome tsne_layer_projection() {
  // vgg16 layer 8 has 512 kernels; 9 classes give 4608 mean maps.
  const ModelState m = build_preset("vgg16", {3, 32, 32}, 9, 3);
  LabeledBatch batch;
  batch.images = Tensor({18, 3, 32, 32});
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (std::size_t i = 0; i < batch.images.size(); ++i) batch.images[i] = u(rng);
  for (int c = 0; c < 9; ++c) batch.labels.insert(batch.labels.end(), {c, c});
  const Projection2D p = project_layer(m, 8, batch, {30.0, 1000, 1});
  bool finite = true;
  for (const auto& pt : p.points) finite = finite && std::isfinite(pt.x) && std::isfinite(pt.y);
  const bool ok = p.points.size() == 4608 && finite;
  return {ok, buf("vgg16 layer 8 at 32x32, 512 kernels x 9 classes: %zu points, %s, final KL %.3f", p.points.size(),
                  finite ? "all finite" : "NON-FINITE", p.final_kl)};
}

Outcome crash_safety(const fs::path& root) {
  const auto s = oracle::crash_sweep(root);
  const bool ok = s.transitions > 0 && s.killed == s.transitions && s.recovered == s.transitions &&
                  s.records_stable == s.transitions;
  std::string detail = buf("killed at %zu/%zu transitions; %zu restarts matched the clean run; %zu kept records "
                           "byte-stable",
                           s.killed, s.transitions, s.recovered, s.records_stable);
  for (std::size_t i = 0; i < std::min<std::size_t>(3, s.failures.size()); ++i) detail += "; " + s.failures[i];
  return {ok, detail};
}

}  // namespace

int main() {
  const fs::path root = fs::temp_directory_path() / "pruneforge-acceptance";
  fs::remove_all(root);
  const auto start = std::chrono::steady_clock::now();

  criterion("flops-reproduction", 1, flops_reproduction);
  criterion("gradient-suite", 60, gradient_suite);
  criterion("surgery-oracle", 60, surgery);
  criterion("objective-score-oracle", 120, objective_scores);
  criterion("progressive-contract", 600, progressive_contract);
  criterion("end-to-end-directional", 2700, [&] { return end_to_end(root / "e2e"); });
  criterion("metrics-closed-forms", 0, metrics_closed_forms);
  criterion("tsne-200-points", 120, tsne_small);
  criterion("tsne-4608-point-projection", 600, tsne_layer_projection);
  criterion("session-crash-safety", 0, [&] { return crash_safety(root / "crash"); });

  fs::remove_all(root);
  const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("%s: %d criteria failed, %.0fs total\n", failures == 0 ? "ALL PASS" : "FAILURES", failures, total);
  return failures == 0 ? 0 : 1;
}
