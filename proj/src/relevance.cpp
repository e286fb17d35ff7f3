#include "pruneforge/relevance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pruneforge/ops.hpp"

namespace pruneforge {
namespace {

constexpr std::size_t kChunk = 64;

void require_eval(const LabeledBatch& eval, const char* what) {
  if (eval.size() == 0) throw Error(std::string(what) + ": empty evaluation set");
}

void require_conv_layer(const ModelState& model, std::size_t layer) {
  if (layer < 1 || layer > model.spec.conv_count()) {
    throw Error("layer " + std::to_string(layer) + " is not a conv layer of this model");
  }
}

template <typename Fn>
void for_each_chunk(const LabeledBatch& eval, Fn&& fn) {
  const std::size_t n = eval.size();
  for (std::size_t begin = 0; begin < n; begin += kChunk) {
    const std::size_t end = std::min(n, begin + kChunk);
    Tensor images = eval.images.slice_leading(begin, end);
    std::span<const int> labels(eval.labels.data() + begin, end - begin);
    fn(images, labels);
  }
}

}  // namespace

std::string to_string(Criterion c) {
  switch (c) {
    case Criterion::objective_loss_delta: return "objective_loss_delta";
    case Criterion::l1_norm: return "l1_norm";
    case Criterion::apoz: return "apoz";
  }
  return "unknown";
}

Criterion criterion_from_string(const std::string& name) {
  if (name == "objective_loss_delta" || name == "objective") return Criterion::objective_loss_delta;
  if (name == "l1_norm" || name == "l1") return Criterion::l1_norm;
  if (name == "apoz") return Criterion::apoz;
  throw Error("unknown criterion '" + name + "'");
}

int relevance_direction(Criterion c) { return c == Criterion::apoz ? -1 : 1; }

void to_json(nlohmann::json& j, const KernelScore& s) {
  j = {{"layer", s.layer}, {"kernel", s.kernel}, {"criterion", to_string(s.criterion)}, {"value", s.value}};
}

void from_json(const nlohmann::json& j, KernelScore& s) {
  s.layer = j.at("layer").get<std::size_t>();
  s.kernel = j.at("kernel").get<std::size_t>();
  s.criterion = criterion_from_string(j.at("criterion").get<std::string>());
  s.value = j.at("value").get<double>();
}

double mean_cross_entropy(const ModelState& model, const LabeledBatch& eval) {
  require_eval(eval, "mean_cross_entropy");
  double total = 0.0;
  for_each_chunk(eval, [&](const Tensor& images, std::span<const int> labels) {
    total += ops::softmax_cross_entropy(forward_logits(model, images), labels).loss *
             static_cast<double>(labels.size());
  });
  return total / static_cast<double>(eval.size());
}

std::vector<KernelScore> score_objective(const ModelState& model, std::size_t layer,
                                         const LabeledBatch& eval) {
  require_conv_layer(model, layer);
  require_eval(eval, "score_objective");
  const std::size_t kernels = model.spec.conv_layers[layer - 1].out_channels;
  std::vector<double> masked(kernels, 0.0);
  double base = 0.0;
  // The layer-l activations are computed once per chunk and reused for every
  // kernel's masked continuation.
  for_each_chunk(eval, [&](const Tensor& images, std::span<const int> labels) {
    const Tensor act = forward_to_layer(model, images, layer);
    const double weight = static_cast<double>(labels.size());
    base += ops::softmax_cross_entropy(forward_range(model, act, layer), labels).loss * weight;
    for (std::size_t k = 0; k < kernels; ++k) {
      Tensor a = act;
      zero_channels(a, {k});
      masked[k] += ops::softmax_cross_entropy(forward_range(model, a, layer), labels).loss * weight;
    }
  });
  const double n = static_cast<double>(eval.size());
  std::vector<KernelScore> scores;
  for (std::size_t k = 0; k < kernels; ++k) {
    scores.push_back({layer, k, masked[k] / n - base / n, Criterion::objective_loss_delta});
  }
  return scores;
}

std::vector<KernelScore> score_l1(const ModelState& model, std::size_t layer) {
  require_conv_layer(model, layer);
  const Tensor& w = model.conv[layer - 1].kernels;
  const std::size_t kernels = w.dim(0), per = w.size() / kernels;
  std::vector<KernelScore> scores;
  for (std::size_t k = 0; k < kernels; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < per; ++i) sum += std::abs(static_cast<double>(w[k * per + i]));
    scores.push_back({layer, k, sum, Criterion::l1_norm});
  }
  return scores;
}

std::vector<KernelScore> score_apoz(const ModelState& model, std::size_t layer, const LabeledBatch& eval) {
  require_conv_layer(model, layer);
  require_eval(eval, "score_apoz");
  const std::size_t kernels = model.spec.conv_layers[layer - 1].out_channels;
  std::vector<std::uint64_t> zeros(kernels, 0);
  std::uint64_t per_channel = 0;
  for_each_chunk(eval, [&](const Tensor& images, std::span<const int>) {
    const Tensor act = conv_relu_output(model, images, layer);
    const std::size_t b = act.dim(0), plane = act.dim(2) * act.dim(3);
    per_channel += b * plane;
    for (std::size_t n = 0; n < b; ++n) {
      for (std::size_t k = 0; k < kernels; ++k) {
        const float* p = act.data() + (n * kernels + k) * plane;
        zeros[k] += static_cast<std::uint64_t>(std::count(p, p + plane, 0.0f));
      }
    }
  });
  std::vector<KernelScore> scores;
  for (std::size_t k = 0; k < kernels; ++k) {
    scores.push_back({layer, k, static_cast<double>(zeros[k]) / static_cast<double>(per_channel),
                      Criterion::apoz});
  }
  return scores;
}

std::vector<KernelScore> score_layer(Criterion criterion, const ModelState& model, std::size_t layer,
                                     const LabeledBatch& eval) {
  switch (criterion) {
    case Criterion::objective_loss_delta: return score_objective(model, layer, eval);
    case Criterion::l1_norm: return score_l1(model, layer);
    case Criterion::apoz: return score_apoz(model, layer, eval);
  }
  throw Error("unknown criterion");
}

SelectionPolicy SelectionPolicy::fixed(double fraction) {
  SelectionPolicy p;
  p.mode = Mode::fixed_fraction;
  p.fraction = fraction;
  return p;
}

SelectionPolicy SelectionPolicy::below(double threshold) {
  SelectionPolicy p;
  p.mode = Mode::threshold;
  p.threshold = threshold;
  return p;
}

SelectionPolicy SelectionPolicy::exactly(std::vector<std::size_t> kernels) {
  SelectionPolicy p;
  p.mode = Mode::explicit_set;
  p.kernels = std::move(kernels);
  return p;
}

void to_json(nlohmann::json& j, const SelectionPolicy& p) {
  switch (p.mode) {
    case SelectionPolicy::Mode::fixed_fraction: j = {{"mode", "fixed_fraction"}, {"fraction", p.fraction}}; break;
    case SelectionPolicy::Mode::threshold: j = {{"mode", "threshold"}, {"threshold", p.threshold}}; break;
    case SelectionPolicy::Mode::explicit_set: j = {{"mode", "explicit"}, {"kernels", p.kernels}}; break;
  }
}

void from_json(const nlohmann::json& j, SelectionPolicy& p) {
  const auto mode = j.at("mode").get<std::string>();
  if (mode == "fixed_fraction") {
    p = SelectionPolicy::fixed(j.at("fraction").get<double>());
  } else if (mode == "threshold") {
    p = SelectionPolicy::below(j.at("threshold").get<double>());
  } else if (mode == "explicit") {
    p = SelectionPolicy::exactly(j.at("kernels").get<std::vector<std::size_t>>());
  } else {
    throw Error("unknown selection mode '" + mode + "'");
  }
}

KernelSet select(const std::vector<KernelScore>& scores, const SelectionPolicy& policy) {
  if (scores.empty()) throw Error("select: no scores");
  const std::size_t layer = scores.front().layer;
  const std::size_t count = scores.size();
  for (std::size_t i = 0; i < count; ++i) {
    if (scores[i].layer != layer) throw Error("select: scores span several layers");
    if (!std::isfinite(scores[i].value)) throw Error("select: non-finite score");
  }

  std::vector<std::size_t> removed;
  switch (policy.mode) {
    case SelectionPolicy::Mode::fixed_fraction: {
      if (!(policy.fraction > 0.0 && policy.fraction < 1.0)) {
        throw Error("fixed fraction must lie in (0,1)");
      }
      const auto n = static_cast<std::size_t>(std::floor(policy.fraction * static_cast<double>(count)));
      std::vector<std::size_t> order(count);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const double ra = scores[a].relevance(), rb = scores[b].relevance();
        if (ra != rb) return ra < rb;
        return scores[a].kernel < scores[b].kernel;
      });
      for (std::size_t i = 0; i < n; ++i) removed.push_back(scores[order[i]].kernel);
      break;
    }
    case SelectionPolicy::Mode::threshold:
      for (const auto& s : scores) {
        if (s.relevance() < policy.threshold) removed.push_back(s.kernel);
      }
      break;
    case SelectionPolicy::Mode::explicit_set:
      for (auto k : policy.kernels) {
        if (k >= count) throw Error("kernel " + std::to_string(k) + " out of range");
      }
      removed = policy.kernels;
      break;
  }
  if (removed.size() >= count) {
    throw Error("selection would remove all " + std::to_string(count) + " kernels of layer " +
                std::to_string(layer));
  }
  return KernelSet::make(layer, std::move(removed));
}

}  // namespace pruneforge
