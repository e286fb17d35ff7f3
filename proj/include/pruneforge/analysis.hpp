#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "pruneforge/dataio.hpp"
#include "pruneforge/model.hpp"

namespace pruneforge {

/// Class-conditional mean of one kernel's post-ReLU/pool map at a layer.
struct MeanActivationMap {
  std::size_t layer = 0;
  std::size_t kernel = 0;
  std::size_t class_index = 0;
  std::vector<double> values;  // flattened h*w map
};

/// One map per (kernel, class), ordered kernel-major. `class_names` is only
/// used to name an empty class in the error message.
std::vector<MeanActivationMap> compute_mean_activation_maps(const ModelState& model, std::size_t layer,
                                                            const LabeledBatch& train,
                                                            const std::vector<std::string>& class_names = {});

struct TsneParams {
  double perplexity = 30.0;
  std::size_t iterations = 1000;
  std::uint64_t seed = 0;
};

inline constexpr std::size_t kExaggerationIterations = 250;
inline constexpr double kEarlyExaggeration = 12.0;
inline constexpr double kTsneLearningRate = 200.0;

struct TsneResult {
  std::vector<std::array<double, 2>> points;
  /// KL(P||Q) of the embedding entering each iteration, always against the
  /// unexaggerated affinities.
  std::vector<double> kl_trace;
  double final_kl = 0.0;
};

/// Largest perplexity accepted for `count` points: strictly below (count-1)/3.
double max_perplexity(std::size_t count);

/// Symmetrized joint affinities (row-major n*n, zero diagonal, sum 1) from
/// squared Euclidean distances with per-point bandwidths matching `perplexity`.
std::vector<double> joint_probabilities(const std::vector<std::vector<double>>& vectors, double perplexity);

/// KL(P||Q) for a 2D embedding `y` (x0,y0,x1,y1,...) under the Student-t kernel.
double kl_divergence(const std::vector<double>& p, const std::vector<double>& y);

/// Analytic gradient of `kl_divergence` with respect to `y`.
std::vector<double> kl_gradient(const std::vector<double>& p, const std::vector<double>& y);

/// Exact O(n^2) t-SNE. Throws if fewer than 3 vectors, ragged input or an
/// infeasible perplexity.
TsneResult tsne(const std::vector<std::vector<double>>& vectors, const TsneParams& params);

struct ProjectedPoint {
  std::size_t kernel = 0;
  std::size_t class_index = 0;
  double x = 0.0;
  double y = 0.0;
};

struct Projection2D {
  std::size_t layer = 0;
  TsneParams params;  // perplexity actually used (after capping)
  double final_kl = 0.0;
  std::vector<ProjectedPoint> points;

  std::vector<ProjectedPoint> points_of_kernel(std::size_t kernel) const;
};

void to_json(nlohmann::json& j, const Projection2D& p);
void from_json(const nlohmann::json& j, Projection2D& p);

/// Perplexity actually used for `count` points: the request, capped below
/// the feasibility bound.
double capped_perplexity(double requested, std::size_t count);

/// One joint embedding of all |K_l| * c mean activation maps of layer l.
Projection2D project_layer(const ModelState& model, std::size_t layer, const LabeledBatch& train,
                           const TsneParams& params = {}, const std::vector<std::string>& class_names = {});

struct KernelPoint {
  std::size_t kernel = 0;
  double x = 0.0;
  double y = 0.0;
};

struct KernelWeightProjection {
  std::size_t layer = 0;
  TsneParams params;
  std::vector<KernelPoint> points;
};

void to_json(nlohmann::json& j, const KernelWeightProjection& p);

/// Embedding of the flattened kernel weight vectors of layer l (one point
/// per kernel). For inspection only.
KernelWeightProjection project_kernel_weights(const ModelState& model, std::size_t layer, double perplexity,
                                              std::uint64_t seed, std::size_t iterations = 1000);

/// Silhouette-style score in [-1, 1] of how well a kernel's class points
/// separate. For each class point i, the kernel's points are split into
/// {i} and the rest, and the mean silhouette coefficient of that split is
/// taken (a singleton scores 0); the hint is the best such split. Returns -1
/// when all of the kernel's points coincide. Throws if the kernel is absent.
double separation_hint(const Projection2D& projection, std::size_t kernel);

}  // namespace pruneforge
