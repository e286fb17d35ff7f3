#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <vector>

#include "json.hpp"
#include "pruneforge/dataio.hpp"
#include "pruneforge/metrics.hpp"
#include "pruneforge/model.hpp"

namespace pruneforge {

struct RetrainConfig {
  std::size_t progressive_epochs = 40;
  std::size_t final_epochs = 50;
  double final_learning_rate = 1e-5;
  /// Rate of the single full-network epoch used by complete retraining.
  double complete_learning_rate = 1e-5;
  /// Progressive-retraining rate keyed by the pruned layer l.
  std::map<std::size_t, double> per_layer_learning_rates;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  double progressive_rate(std::size_t layer) const;
  void validate() const;

  /// Reference settings: 40/50 epochs, final rate 1e-5 and the
  /// per-layer table from `progressive_rate_table(spec, 1e-5)`.
  static RetrainConfig reference(const ArchitectureSpec& spec);
};

void to_json(nlohmann::json& j, const RetrainConfig& c);
void from_json(const nlohmann::json& j, RetrainConfig& c);

/// Per-layer progressive-retraining rates.
///
/// For the vgg16 preset the published table is returned verbatim (layer 1:
/// 1e-5, layers 2-3: 1e-6, 4-6: 1e-7, 7-13: 1e-8) and `base_rate` is
/// ignored. Other architectures get base_rate * 10^-band, where band is the
/// number of kernel-count doublings of layer l over layer 1.
std::map<std::size_t, double> progressive_rate_table(const ArchitectureSpec& spec, double base_rate);

struct EpochProgress {
  std::size_t epoch = 0;  // 1-based
  std::size_t total = 0;
  double loss = 0.0;
};

using ProgressFn = std::function<void(const EpochProgress&)>;

struct ProgressiveLossReport {
  double initial = 0.0;         // D before any update
  std::vector<double> epochs;   // D after each epoch, over the whole training set
};

void to_json(nlohmann::json& j, const ProgressiveLossReport& r);

struct ProgressiveResult {
  ModelState model;
  ProgressiveLossReport report;
};

/// Mean over `data` of ||A_{l+1}(reference) - A_{l+1}(pruned)||_2 at the
/// output of the layer after `layer` (post-ReLU/pool).
double reconstruction_distance(const ModelState& reference, const ModelState& pruned, std::size_t layer,
                               const LabeledBatch& data);

/// Refines layers 1..l+1 of `pruned` so its layer-(l+1) activations match
/// the reference model's; deeper layers are returned bit-identical.
ProgressiveResult progressive_retrain(const ModelState& reference, const ModelState& pruned,
                                      std::size_t layer, const LabeledBatch& train,
                                      const RetrainConfig& config, const ProgressFn& progress = {});

/// One shuffled epoch of cross-entropy SGD over every layer.
ModelState complete_retrain_epoch(const ModelState& model, const LabeledBatch& train, double learning_rate,
                                  std::size_t batch_size, std::uint64_t seed);

/// Reinitializes the classifier, then trains every layer for
/// config.final_epochs at config.final_learning_rate.
ModelState final_retrain(const ModelState& model, const LabeledBatch& train, const RetrainConfig& config,
                         const ProgressFn& progress = {});

/// Plain cross-entropy training of all layers; returns the per-epoch mean loss.
std::vector<double> train_cross_entropy(ModelState& model, const LabeledBatch& train, std::size_t epochs,
                                        double learning_rate, std::size_t batch_size, std::uint64_t seed,
                                        const ProgressFn& progress = {});

std::vector<int> predict(const ModelState& model, const Tensor& images);
ConfusionMatrix evaluate(const ModelState& model, const LabeledBatch& data);

/// splitmix64 of seed ^ tag; derives independent streams from one run seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag);

}  // namespace pruneforge
