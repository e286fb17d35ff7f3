#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"
#include "pruneforge/dataio.hpp"
#include "pruneforge/model.hpp"

namespace pruneforge {

enum class Criterion { objective_loss_delta, l1_norm, apoz };

std::string to_string(Criterion c);
Criterion criterion_from_string(const std::string& name);

/// +1 when a higher score means a more relevant kernel, -1 otherwise.
int relevance_direction(Criterion c);

struct KernelScore {
  std::size_t layer = 0;
  std::size_t kernel = 0;
  double value = 0.0;
  Criterion criterion = Criterion::objective_loss_delta;

  /// Signed so that larger always means "keep".
  double relevance() const { return relevance_direction(criterion) * value; }
};

void to_json(nlohmann::json& j, const KernelScore& s);
void from_json(const nlohmann::json& j, KernelScore& s);

/// Loss increase when kernel k's output channel at layer l is zeroed:
/// CE(masked) - CE(model), averaged over `eval`.
std::vector<KernelScore> score_objective(const ModelState& model, std::size_t layer,
                                         const LabeledBatch& eval);

/// Sum of absolute kernel weights, bias excluded.
std::vector<KernelScore> score_l1(const ModelState& model, std::size_t layer);

/// Fraction of exactly-zero post-ReLU (pre-pool) outputs per channel.
std::vector<KernelScore> score_apoz(const ModelState& model, std::size_t layer, const LabeledBatch& eval);

std::vector<KernelScore> score_layer(Criterion criterion, const ModelState& model, std::size_t layer,
                                     const LabeledBatch& eval);

/// Mean cross-entropy of `model` on `eval`, processed in chunks.
double mean_cross_entropy(const ModelState& model, const LabeledBatch& eval);

struct SelectionPolicy {
  enum class Mode { fixed_fraction, threshold, explicit_set };
  Mode mode = Mode::fixed_fraction;
  double fraction = 0.5;
  double threshold = 0.0;
  std::vector<std::size_t> kernels;

  static SelectionPolicy fixed(double fraction);
  static SelectionPolicy below(double threshold);
  static SelectionPolicy exactly(std::vector<std::size_t> kernels);
};

void to_json(nlohmann::json& j, const SelectionPolicy& p);
void from_json(const nlohmann::json& j, SelectionPolicy& p);

/// fixed_fraction removes the floor(fraction * K) least relevant kernels
/// (ties: lower index first); threshold removes kernels with relevance
/// strictly below the threshold; explicit_set removes the given kernels.
KernelSet select(const std::vector<KernelScore>& scores, const SelectionPolicy& policy);

}  // namespace pruneforge
