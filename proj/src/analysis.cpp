#include "pruneforge/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace pruneforge {
namespace {

constexpr std::size_t kChunk = 64;
constexpr double kMinProbability = 1e-12;

std::size_t point_count(const std::vector<double>& p, const std::vector<double>& y) {
  const std::size_t n = y.size() / 2;
  if (y.size() % 2 != 0 || p.size() != n * n) throw Error("affinity/embedding size mismatch");
  return n;
}

double squared_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

// Conditional distribution of row i whose entropy matches log(perplexity).
void fit_row(const std::vector<double>& dist, std::size_t i, double target_entropy, double* row) {
  const std::size_t n = dist.size();
  double dmin = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < n; ++j) {
    if (j != i) dmin = std::min(dmin, dist[j]);
  }
  double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 200; ++step) {
    double sum = 0.0, weighted = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) {
        row[j] = 0.0;
        continue;
      }
      const double shifted = dist[j] - dmin;
      row[j] = std::exp(-beta * shifted);
      sum += row[j];
      weighted += shifted * row[j];
    }
    const double entropy = std::log(sum) + beta * weighted / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] /= sum;
    const double diff = entropy - target_entropy;
    if (std::abs(diff) < 1e-5) break;
    if (diff > 0) {
      lo = beta;
      beta = std::isinf(hi) ? beta * 2.0 : (beta + hi) / 2.0;
    } else {
      hi = beta;
      beta = (beta + lo) / 2.0;
    }
  }
}

// Iteration-invariant summaries of the affinity matrix.
struct AffinityStats {
  double p_log_p = 0.0;  // sum of p log p over all entries
  double p_floor = 0.0;  // smallest off-diagonal entry
};

AffinityStats affinity_stats(const std::vector<double>& p, std::size_t n) {
  AffinityStats s;
  s.p_floor = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = p[i * n + j];
      if (v > 0.0) s.p_log_p += v * std::log(v);
      if (i != j) s.p_floor = std::min(s.p_floor, v);
    }
  }
  return s;
}

// One pass over all pairs: KL against `p` and, if `grad` is non-null, the
// gradient for affinities scaled by `exaggeration`.
//
// KL = sum p log p + sum p log(1 + d^2) + (sum p) log Z. Most affinities sit
// at the floor value, so the middle term is split into floor * log(prod of
// (1 + d^2)) plus per-pair logs for the entries above the floor only.
double kl_pass(const std::vector<double>& p, const AffinityStats& stats, const std::vector<double>& y,
               double exaggeration, std::vector<double>* grad) {
  const std::size_t n = y.size() / 2;
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = y[2 * i], yi = y[2 * i + 1];
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xi - y[2 * j], dy = yi - y[2 * j + 1];
      z += 1.0 / (1.0 + dx * dx + dy * dy);
    }
  }
  z *= 2.0;
  const double inv_z = 1.0 / z;
  const double floor = std::max(stats.p_floor, 0.0);
  if (grad) grad->assign(2 * n, 0.0);
  double floor_log = 0.0, excess_log = 0.0, p_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = y[2 * i], yi = y[2 * i + 1];
    const double* prow = p.data() + i * n;
    if (grad) {
      double gx = 0.0, gy = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = xi - y[2 * j], dy = yi - y[2 * j + 1];
        const double q = 1.0 / (1.0 + dx * dx + dy * dy);
        const double mult = (exaggeration * prow[j] - q * inv_z) * q;
        gx += mult * dx;
        gy += mult * dy;
      }
      (*grad)[2 * i] = 4.0 * gx;
      (*grad)[2 * i + 1] = 4.0 * gy;
    }
    double product = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dx = xi - y[2 * j], dy = yi - y[2 * j + 1];
      const double t = 1.0 + dx * dx + dy * dy;
      const double excess = prow[j] - floor;
      p_sum += prow[j];
      if (excess > 0.0) excess_log += excess * std::log(t);
      if (t > 1e100) {
        floor_log += std::log(t);
        continue;
      }
      product *= t;
      if (product > 1e200) {
        floor_log += std::log(product);
        product = 1.0;
      }
    }
    floor_log += std::log(product);
  }
  return stats.p_log_p + 2.0 * (floor * floor_log + excess_log + p_sum * std::log(z));
}

void require_conv_layer(const ModelState& model, std::size_t layer) {
  if (layer < 1 || layer > model.spec.conv_count()) {
    throw Error("layer " + std::to_string(layer) + " is not a conv layer of this model");
  }
}

}  // namespace

std::vector<MeanActivationMap> compute_mean_activation_maps(const ModelState& model, std::size_t layer,
                                                            const LabeledBatch& train,
                                                            const std::vector<std::string>& class_names) {
  require_conv_layer(model, layer);
  const std::size_t classes = model.spec.classifier.class_count;
  train.validate(classes);
  const LayerExtent extent = model.spec.layer_output(layer);
  const std::size_t kernels = extent.channels, plane = extent.height * extent.width;

  std::vector<std::size_t> counts(classes, 0);
  for (int label : train.labels) ++counts[static_cast<std::size_t>(label)];
  for (std::size_t j = 0; j < classes; ++j) {
    if (counts[j] == 0) {
      const std::string name = j < class_names.size() ? class_names[j] : std::to_string(j);
      throw Error("class '" + name + "' has no training images");
    }
  }

  // sums[(k * classes + j) * plane + p]
  std::vector<double> sums(kernels * classes * plane, 0.0);
  const std::size_t n = train.size();
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    const Tensor act = forward_to_layer(model, train.images.slice_leading(begin, end), layer);
    for (std::size_t b = 0; b < end - begin; ++b) {
      const auto j = static_cast<std::size_t>(train.labels[begin + b]);
      for (std::size_t k = 0; k < kernels; ++k) {
        const float* src = act.data() + (b * kernels + k) * plane;
        double* dst = sums.data() + (k * classes + j) * plane;
        for (std::size_t q = 0; q < plane; ++q) dst[q] += src[q];
      }
    }
  }

  std::vector<MeanActivationMap> maps;
  maps.reserve(kernels * classes);
  for (std::size_t k = 0; k < kernels; ++k) {
    for (std::size_t j = 0; j < classes; ++j) {
      MeanActivationMap m{layer, k, j, {}};
      const double* src = sums.data() + (k * classes + j) * plane;
      m.values.assign(src, src + plane);
      for (double& v : m.values) v /= static_cast<double>(counts[j]);
      maps.push_back(std::move(m));
    }
  }
  return maps;
}

double max_perplexity(std::size_t count) {
  if (count < 3) throw Error("t-SNE needs at least 3 points, got " + std::to_string(count));
  return std::nextafter((static_cast<double>(count) - 1.0) / 3.0, 0.0);
}

double capped_perplexity(double requested, std::size_t count) {
  return std::min(requested, max_perplexity(count));
}

std::vector<double> joint_probabilities(const std::vector<std::vector<double>>& vectors, double perplexity) {
  const std::size_t n = vectors.size();
  if (!(perplexity > 0.0) || perplexity > max_perplexity(n)) {
    throw Error("perplexity " + std::to_string(perplexity) + " is infeasible for " + std::to_string(n) +
                " points (must be in (0, (n-1)/3))");
  }
  const std::size_t dim = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != dim) throw Error("t-SNE input vectors differ in length");
    for (double x : v) {
      if (!std::isfinite(x)) throw Error("t-SNE input contains a non-finite value");
    }
  }
  std::vector<double> conditional(n * n, 0.0), dist(n);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) dist[j] = j == i ? 0.0 : squared_distance(vectors[i], vectors[j]);
    fit_row(dist, i, target, conditional.data() + i * n);
  }
  std::vector<double> p(n * n, 0.0);
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      p[i * n + j] = std::max((conditional[i * n + j] + conditional[j * n + i]) * scale, kMinProbability);
      total += p[i * n + j];
    }
  }
  for (double& v : p) v /= total;
  return p;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& y) {
  point_count(p, y);
  return kl_pass(p, affinity_stats(p, point_count(p, y)), y, 1.0, nullptr);
}

std::vector<double> kl_gradient(const std::vector<double>& p, const std::vector<double>& y) {
  point_count(p, y);
  std::vector<double> grad;
  kl_pass(p, affinity_stats(p, point_count(p, y)), y, 1.0, &grad);
  return grad;
}

TsneResult tsne(const std::vector<std::vector<double>>& vectors, const TsneParams& params) {
  const std::size_t n = vectors.size();
  if (n < 3) throw Error("t-SNE needs at least 3 points, got " + std::to_string(n));
  const std::vector<double> p = joint_probabilities(vectors, params.perplexity);
  const AffinityStats stats = affinity_stats(p, n);

  std::mt19937_64 rng(params.seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  std::vector<double> y(2 * n), velocity(2 * n, 0.0), grad;
  for (double& v : y) v = init(rng);

  TsneResult result;
  result.kl_trace.reserve(params.iterations);
  for (std::size_t it = 0; it < params.iterations; ++it) {
    const bool early = it < kExaggerationIterations;
    const double momentum = early ? 0.5 : 0.8;
    // The trace is measured against the unexaggerated affinities; the
    // exaggerated gradient is linear in P so one pass serves both.
    result.kl_trace.push_back(kl_pass(p, stats, y, early ? kEarlyExaggeration : 1.0, &grad));
    // Momentum accumulated against the exaggerated objective is dropped when
    // the exaggeration ends.
    if (it == kExaggerationIterations) std::fill(velocity.begin(), velocity.end(), 0.0);
    for (std::size_t i = 0; i < 2 * n; ++i) {
      velocity[i] = momentum * velocity[i] - kTsneLearningRate * grad[i];
      y[i] += velocity[i];
    }
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  result.final_kl = kl_pass(p, stats, y, 1.0, nullptr);
  result.points.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(y[2 * i]) || !std::isfinite(y[2 * i + 1])) throw Error("t-SNE diverged");
    result.points[i] = {y[2 * i], y[2 * i + 1]};
  }
  return result;
}

std::vector<ProjectedPoint> Projection2D::points_of_kernel(std::size_t kernel) const {
  std::vector<ProjectedPoint> out;
  for (const auto& pt : points) {
    if (pt.kernel == kernel) out.push_back(pt);
  }
  return out;
}

void to_json(nlohmann::json& j, const Projection2D& p) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& pt : p.points) {
    points.push_back({{"kernel", pt.kernel}, {"class", pt.class_index}, {"x", pt.x}, {"y", pt.y}});
  }
  j = {{"layer", p.layer},
       {"params", {{"perplexity", p.params.perplexity}, {"iterations", p.params.iterations}, {"seed", p.params.seed}}},
       {"final_kl", p.final_kl},
       {"points", std::move(points)}};
}

void from_json(const nlohmann::json& j, Projection2D& p) {
  p.layer = j.at("layer").get<std::size_t>();
  const auto& params = j.at("params");
  p.params.perplexity = params.at("perplexity").get<double>();
  p.params.iterations = params.at("iterations").get<std::size_t>();
  p.params.seed = params.at("seed").get<std::uint64_t>();
  p.final_kl = j.value("final_kl", 0.0);
  p.points.clear();
  for (const auto& pt : j.at("points")) {
    p.points.push_back({pt.at("kernel").get<std::size_t>(), pt.at("class").get<std::size_t>(),
                        pt.at("x").get<double>(), pt.at("y").get<double>()});
  }
}

Projection2D project_layer(const ModelState& model, std::size_t layer, const LabeledBatch& train,
                           const TsneParams& params, const std::vector<std::string>& class_names) {
  const auto maps = compute_mean_activation_maps(model, layer, train, class_names);
  std::vector<std::vector<double>> vectors;
  vectors.reserve(maps.size());
  for (const auto& m : maps) vectors.push_back(m.values);

  Projection2D projection;
  projection.layer = layer;
  projection.params = params;
  projection.params.perplexity = capped_perplexity(params.perplexity, vectors.size());
  const TsneResult embedded = tsne(vectors, projection.params);
  projection.final_kl = embedded.final_kl;
  for (std::size_t i = 0; i < maps.size(); ++i) {
    projection.points.push_back(
        {maps[i].kernel, maps[i].class_index, embedded.points[i][0], embedded.points[i][1]});
  }
  return projection;
}

void to_json(nlohmann::json& j, const KernelWeightProjection& p) {
  nlohmann::json points = nlohmann::json::array();
  for (const auto& pt : p.points) points.push_back({{"kernel", pt.kernel}, {"x", pt.x}, {"y", pt.y}});
  j = {{"layer", p.layer},
       {"params", {{"perplexity", p.params.perplexity}, {"iterations", p.params.iterations}, {"seed", p.params.seed}}},
       {"points", std::move(points)}};
}

KernelWeightProjection project_kernel_weights(const ModelState& model, std::size_t layer, double perplexity,
                                              std::uint64_t seed, std::size_t iterations) {
  require_conv_layer(model, layer);
  const Tensor& w = model.conv[layer - 1].kernels;
  const std::size_t kernels = w.dim(0), per = w.size() / kernels;
  std::vector<std::vector<double>> vectors(kernels);
  for (std::size_t k = 0; k < kernels; ++k) vectors[k].assign(w.data() + k * per, w.data() + (k + 1) * per);

  KernelWeightProjection projection;
  projection.layer = layer;
  projection.params = {capped_perplexity(perplexity, kernels), iterations, seed};
  const TsneResult embedded = tsne(vectors, projection.params);
  for (std::size_t k = 0; k < kernels; ++k) {
    projection.points.push_back({k, embedded.points[k][0], embedded.points[k][1]});
  }
  return projection;
}

double separation_hint(const Projection2D& projection, std::size_t kernel) {
  const auto pts = projection.points_of_kernel(kernel);
  if (pts.empty()) throw Error("kernel " + std::to_string(kernel) + " is not in the projection");
  const std::size_t c = pts.size();
  auto dist = [&](std::size_t a, std::size_t b) { return std::hypot(pts[a].x - pts[b].x, pts[a].y - pts[b].y); };

  double spread = 0.0;
  for (std::size_t a = 0; a < c; ++a) {
    for (std::size_t b = a + 1; b < c; ++b) spread = std::max(spread, dist(a, b));
  }
  if (spread <= 1e-12) return -1.0;

  double best = -1.0;
  for (std::size_t out = 0; out < c; ++out) {
    double total = 0.0;  // the singleton {out} contributes 0
    for (std::size_t r = 0; r < c; ++r) {
      if (r == out || c < 3) continue;
      double a = 0.0;
      for (std::size_t o = 0; o < c; ++o) {
        if (o != r && o != out) a += dist(r, o);
      }
      a /= static_cast<double>(c - 2);
      const double b = dist(r, out);
      const double denom = std::max(a, b);
      total += denom > 0.0 ? (b - a) / denom : 0.0;
    }
    best = std::max(best, total / static_cast<double>(c));
  }
  return best;
}

}  // namespace pruneforge
