#include "pruneforge/retraining.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pruneforge/ops.hpp"
#include "pruneforge/tape.hpp"

namespace pruneforge {
namespace {

constexpr std::size_t kEvalChunk = 64;
constexpr double kVgg16ProgressiveRates[] = {1e-5, 1e-6, 1e-6, 1e-7, 1e-7, 1e-7, 1e-8,
                                             1e-8, 1e-8, 1e-8, 1e-8, 1e-8, 1e-8};

struct RecordedForward {
  VarId output;
  std::vector<std::pair<VarId, Tensor*>> params;
};

// Records layers 1..to_layer on `tape`. Parameters of layers <= trainable_upto
// become trainable leaves bound to the tensors of `model` they update.
RecordedForward record_forward(GradientTape<float>& tape, ModelState& model, const Tensor& images,
                               std::size_t to_layer, std::size_t trainable_upto) {
  RecordedForward rec;
  const std::size_t L = model.spec.conv_count();
  auto leaf = [&](Tensor& t, bool trainable) {
    if (!trainable) return tape.constant(t);
    VarId id = tape.parameter(t);
    rec.params.emplace_back(id, &t);
    return id;
  };
  VarId x = tape.constant(images);
  for (std::size_t layer = 1; layer <= to_layer; ++layer) {
    const bool trainable = layer <= trainable_upto;
    if (layer <= L) {
      auto& p = model.conv[layer - 1];
      VarId k = leaf(p.kernels, trainable);
      VarId b = leaf(p.bias, trainable);
      x = tape.relu(tape.conv2d(x, k, b));
      if (model.spec.conv_layers[layer - 1].pool_after) x = tape.maxpool2d(x);
    } else {
      const std::size_t index = layer - L - 1;
      if (index == 0) x = tape.flatten(x);
      auto& p = model.classifier[index];
      VarId w = leaf(p.weights, trainable);
      VarId b = leaf(p.bias, trainable);
      x = tape.dense(x, w, b);
      if (index + 1 < model.classifier.size()) x = tape.relu(x);
    }
  }
  rec.output = x;
  return rec;
}

void apply_updates(const GradientTape<float>& tape, const RecordedForward& rec, double lr) {
  for (const auto& [id, tensor] : rec.params) {
    const auto& g = tape.grad(id);
    if (g.empty()) continue;
    ops::sgd_update(*tensor, g, lr);
  }
}

std::vector<std::size_t> shuffled(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

template <typename Fn>
void for_each_batch(const LabeledBatch& data, const std::vector<std::size_t>& order, std::size_t batch_size,
                    Fn&& fn) {
  for (std::size_t begin = 0; begin < order.size(); begin += batch_size) {
    const std::size_t end = std::min(order.size(), begin + batch_size);
    std::span<const std::size_t> rows(order.data() + begin, end - begin);
    Tensor images = data.images.gather_leading(rows);
    std::vector<int> labels;
    for (auto r : rows) labels.push_back(data.labels[r]);
    fn(images, std::move(labels));
  }
}

void check_layers_beyond(const ModelState& reference, const ModelState& pruned, std::size_t target) {
  const std::size_t L = reference.spec.conv_count();
  if (pruned.spec.conv_count() != L || pruned.classifier.size() != reference.classifier.size()) {
    throw Error("progressive_retrain: models have different layer counts");
  }
  auto mismatch = [](std::size_t layer) {
    throw Error("progressive_retrain: layer " + std::to_string(layer) +
                " differs between reference and pruned model");
  };
  for (std::size_t layer = target + 1; layer <= L; ++layer) {
    const auto& a = reference.conv[layer - 1];
    const auto& b = pruned.conv[layer - 1];
    if (!bit_equal(a.kernels, b.kernels) || !bit_equal(a.bias, b.bias)) mismatch(layer);
  }
  for (std::size_t i = 0; i < reference.classifier.size(); ++i) {
    if (L + 1 + i <= target) continue;
    const auto& a = reference.classifier[i];
    const auto& b = pruned.classifier[i];
    if (!bit_equal(a.weights, b.weights) || !bit_equal(a.bias, b.bias)) mismatch(L + 1 + i);
  }
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag) {
  std::uint64_t z = seed ^ (tag * 0x9E3779B97F4A7C15ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

double RetrainConfig::progressive_rate(std::size_t layer) const {
  auto it = per_layer_learning_rates.find(layer);
  if (it == per_layer_learning_rates.end()) {
    throw Error("no progressive learning rate configured for layer " + std::to_string(layer));
  }
  return it->second;
}

void RetrainConfig::validate() const {
  if (progressive_epochs < 1) throw Error("progressive_epochs must be at least 1");
  if (batch_size < 1) throw Error("batch_size must be at least 1");
  if (!(final_learning_rate > 0.0) || !(complete_learning_rate > 0.0)) {
    throw Error("learning rates must be positive");
  }
  for (const auto& [layer, rate] : per_layer_learning_rates) {
    if (!(rate > 0.0)) throw Error("learning rate for layer " + std::to_string(layer) + " must be positive");
  }
}

RetrainConfig RetrainConfig::reference(const ArchitectureSpec& spec) {
  RetrainConfig c;
  c.per_layer_learning_rates = progressive_rate_table(spec, 1e-5);
  return c;
}

std::map<std::size_t, double> progressive_rate_table(const ArchitectureSpec& spec, double base_rate) {
  std::map<std::size_t, double> table;
  const std::size_t L = spec.conv_count();
  if (spec.preset == "vgg16" && L == std::size(kVgg16ProgressiveRates)) {
    for (std::size_t l = 1; l <= L; ++l) table[l] = kVgg16ProgressiveRates[l - 1];
    return table;
  }
  const double first = static_cast<double>(spec.conv_layers.front().out_channels);
  for (std::size_t l = 1; l <= L; ++l) {
    const double ratio = static_cast<double>(spec.conv_layers[l - 1].out_channels) / first;
    const double band = std::max(0.0, std::round(std::log2(ratio)));
    table[l] = base_rate * std::pow(10.0, -band);
  }
  return table;
}

void to_json(nlohmann::json& j, const RetrainConfig& c) {
  nlohmann::json rates = nlohmann::json::object();
  for (const auto& [layer, rate] : c.per_layer_learning_rates) rates[std::to_string(layer)] = rate;
  j = {{"progressive_epochs", c.progressive_epochs},
       {"final_epochs", c.final_epochs},
       {"final_learning_rate", c.final_learning_rate},
       {"complete_learning_rate", c.complete_learning_rate},
       {"per_layer_learning_rates", rates},
       {"batch_size", c.batch_size},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, RetrainConfig& c) {
  c.progressive_epochs = j.at("progressive_epochs").get<std::size_t>();
  c.final_epochs = j.at("final_epochs").get<std::size_t>();
  c.final_learning_rate = j.at("final_learning_rate").get<double>();
  c.complete_learning_rate = j.at("complete_learning_rate").get<double>();
  c.per_layer_learning_rates.clear();
  for (const auto& [key, value] : j.at("per_layer_learning_rates").items()) {
    c.per_layer_learning_rates[std::stoul(key)] = value.get<double>();
  }
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
}

void to_json(nlohmann::json& j, const ProgressiveLossReport& r) {
  j = {{"initial", r.initial}, {"epochs", r.epochs}};
}

double reconstruction_distance(const ModelState& reference, const ModelState& pruned, std::size_t layer,
                               const LabeledBatch& data) {
  if (data.size() == 0) throw Error("reconstruction_distance: empty data");
  const std::size_t target = layer + 1;
  double total = 0.0;
  for (std::size_t begin = 0; begin < data.size(); begin += kEvalChunk) {
    const std::size_t end = std::min(data.size(), begin + kEvalChunk);
    const Tensor images = data.images.slice_leading(begin, end);
    const auto r = ops::mean_l2_distance(forward_to_layer(pruned, images, target),
                                         forward_to_layer(reference, images, target));
    total += r.loss * static_cast<double>(end - begin);
  }
  return total / static_cast<double>(data.size());
}

ProgressiveResult progressive_retrain(const ModelState& reference, const ModelState& pruned,
                                      std::size_t layer, const LabeledBatch& train,
                                      const RetrainConfig& config, const ProgressFn& progress) {
  config.validate();
  const std::size_t L = reference.spec.conv_count();
  if (layer < 1 || layer > L) {
    throw Error("progressive_retrain: layer " + std::to_string(layer) + " out of range [1," +
                std::to_string(L) + "]");
  }
  if (train.size() == 0) throw Error("progressive_retrain: empty training set");
  const std::size_t target = layer + 1;
  check_layers_beyond(reference, pruned, target);
  const double lr = config.progressive_rate(layer);

  ProgressiveResult result{pruned, {}};
  result.report.initial = reconstruction_distance(reference, result.model, layer, train);
  std::mt19937_64 rng(derive_seed(config.seed, 0x5052 + layer));
  for (std::size_t epoch = 1; epoch <= config.progressive_epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    for_each_batch(train, order, config.batch_size, [&](const Tensor& images, std::vector<int>) {
      const Tensor teacher = forward_to_layer(reference, images, target);
      GradientTape<float> tape;
      auto rec = record_forward(tape, result.model, images, target, target);
      VarId loss = tape.mean_l2_distance(rec.output, teacher);
      if (!std::isfinite(tape.scalar(loss))) {
        throw Error("progressive_retrain: non-finite loss in epoch " + std::to_string(epoch));
      }
      tape.backward(loss);
      apply_updates(tape, rec, lr);
    });
    double d = 0.0;
    try {
      d = reconstruction_distance(reference, result.model, layer, train);
    } catch (const Error& e) {
      throw Error("progressive_retrain: epoch " + std::to_string(epoch) + ": " + e.what());
    }
    if (!std::isfinite(d)) throw Error("progressive_retrain: non-finite loss in epoch " + std::to_string(epoch));
    result.report.epochs.push_back(d);
    if (progress) progress({epoch, config.progressive_epochs, d});
  }
  return result;
}

std::vector<double> train_cross_entropy(ModelState& model, const LabeledBatch& train, std::size_t epochs,
                                        double learning_rate, std::size_t batch_size, std::uint64_t seed,
                                        const ProgressFn& progress) {
  if (train.size() == 0) throw Error("training set is empty");
  if (batch_size == 0) throw Error("batch size must be positive");
  const std::size_t last = model.spec.conv_count() + model.classifier.size();
  std::mt19937_64 rng(seed);
  std::vector<double> losses;
  for (std::size_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto order = shuffled(train.size(), rng);
    double total = 0.0;
    for_each_batch(train, order, batch_size, [&](const Tensor& images, std::vector<int> labels) {
      GradientTape<float> tape;
      auto rec = record_forward(tape, model, images, last, last);
      const double n = static_cast<double>(labels.size());
      VarId loss = tape.softmax_cross_entropy(rec.output, std::move(labels));
      const double value = tape.scalar(loss);
      if (!std::isfinite(value)) throw Error("training: non-finite loss in epoch " + std::to_string(epoch));
      total += value * n;
      tape.backward(loss);
      apply_updates(tape, rec, learning_rate);
    });
    losses.push_back(total / static_cast<double>(train.size()));
    if (progress) progress({epoch, epochs, losses.back()});
  }
  return losses;
}

ModelState complete_retrain_epoch(const ModelState& model, const LabeledBatch& train, double learning_rate,
                                  std::size_t batch_size, std::uint64_t seed) {
  ModelState out = model;
  train_cross_entropy(out, train, 1, learning_rate, batch_size, seed);
  return out;
}

ModelState final_retrain(const ModelState& model, const LabeledBatch& train, const RetrainConfig& config,
                         const ProgressFn& progress) {
  config.validate();
  ModelState out = glorot_reinit_classifier(model, derive_seed(config.seed, 0x474C));
  train_cross_entropy(out, train, config.final_epochs, config.final_learning_rate, config.batch_size,
                      derive_seed(config.seed, 0x4652), progress);
  return out;
}

std::vector<int> predict(const ModelState& model, const Tensor& images) {
  std::vector<int> out;
  const std::size_t n = images.dim(0);
  for (std::size_t begin = 0; begin < n; begin += kEvalChunk) {
    const std::size_t end = std::min(n, begin + kEvalChunk);
    const Tensor logits = forward_logits(model, images.slice_leading(begin, end));
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < end - begin; ++r) {
      const float* row = logits.data() + r * c;
      out.push_back(static_cast<int>(std::max_element(row, row + c) - row));
    }
  }
  return out;
}

ConfusionMatrix evaluate(const ModelState& model, const LabeledBatch& data) {
  if (data.size() == 0) throw Error("evaluate: empty data");
  const auto predicted = predict(model, data.images);
  return ConfusionMatrix::from_predictions(model.spec.classifier.class_count, data.labels, predicted);
}

}  // namespace pruneforge
