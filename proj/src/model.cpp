#include "pruneforge/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "pruneforge/ops.hpp"

namespace pruneforge {
namespace {

constexpr std::size_t kVgg16Kernels[] = {64, 64, 128, 128, 256, 256, 256, 512, 512, 512, 512, 512, 512};
constexpr std::size_t kVgg16PoolAfter[] = {2, 4, 7, 10, 13};

void fill_uniform(Tensor& tensor, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : tensor.values()) v = static_cast<float>(dist(rng));
}

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
  return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

void init_classifier(ModelState& model, std::mt19937_64& rng) {
  std::size_t in = model.spec.flattened_size();
  const auto& cls = model.spec.classifier;
  model.classifier.clear();
  auto add = [&](std::size_t out) {
    DenseParams p{Tensor({out, in}), Tensor({out})};
    fill_uniform(p.weights, glorot_limit(in, out), rng);
    model.classifier.push_back(std::move(p));
    in = out;
  };
  for (auto h : cls.hidden_sizes) add(h);
  add(cls.class_count);
}

Tensor apply_conv_layer(const ModelState& model, const Tensor& x, std::size_t index) {
  const auto& p = model.conv[index];
  Tensor y = ops::relu(ops::conv2d(x, p.kernels, p.bias));
  if (model.spec.conv_layers[index].pool_after) y = ops::maxpool2d(y).output;
  return y;
}

Tensor apply_dense_layer(const ModelState& model, const Tensor& x, std::size_t index) {
  Tensor in = x.rank() == 2 ? x : x.reshaped({x.dim(0), x.size() / x.dim(0)});
  Tensor y = ops::dense(in, model.classifier[index].weights, model.classifier[index].bias);
  if (index + 1 < model.classifier.size()) y = ops::relu(y);
  return y;
}

void check_images(const ModelState& model, const Tensor& images) {
  const auto& in = model.spec.input;
  if (images.rank() != 4 || images.dim(1) != in.channels || images.dim(2) != in.height ||
      images.dim(3) != in.width) {
    throw Error("images " + shape_to_string(images.shape()) + " do not match model input [b," +
                std::to_string(in.channels) + "," + std::to_string(in.height) + "," +
                std::to_string(in.width) + "]");
  }
}

}  // namespace

LayerExtent ArchitectureSpec::conv_input(std::size_t layer) const {
  if (layer < 1 || layer > conv_layers.size()) {
    throw Error("conv layer " + std::to_string(layer) + " out of range [1," +
                std::to_string(conv_layers.size()) + "]");
  }
  std::size_t h = input.height, w = input.width;
  for (std::size_t i = 0; i + 1 < layer; ++i) {
    if (conv_layers[i].pool_after) {
      h /= 2;
      w /= 2;
    }
  }
  return {conv_layers[layer - 1].in_channels, h, w};
}

LayerExtent ArchitectureSpec::layer_output(std::size_t layer) const {
  const std::size_t L = conv_layers.size();
  if (layer < 1 || layer > L + 1) {
    throw Error("layer " + std::to_string(layer) + " out of range [1," + std::to_string(L + 1) + "]");
  }
  if (layer == L + 1) {
    const std::size_t units =
        classifier.hidden_sizes.empty() ? classifier.class_count : classifier.hidden_sizes.front();
    return {units, 1, 1};
  }
  auto e = conv_input(layer);
  e.channels = conv_layers[layer - 1].out_channels;
  if (conv_layers[layer - 1].pool_after) {
    e.height /= 2;
    e.width /= 2;
  }
  return e;
}

std::size_t ArchitectureSpec::flattened_size() const {
  if (conv_layers.empty()) return input.channels * input.height * input.width;
  return layer_output(conv_layers.size()).size();
}

std::size_t ArchitectureSpec::total_kernels() const {
  std::size_t total = 0;
  for (const auto& c : conv_layers) total += c.out_channels;
  return total;
}

std::size_t ArchitectureSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& c : conv_layers) {
    total += c.out_channels * c.in_channels * c.kernel_extent * c.kernel_extent + c.out_channels;
  }
  std::size_t in = flattened_size();
  for (auto h : classifier.hidden_sizes) {
    total += h * in + h;
    in = h;
  }
  return total + classifier.class_count * in + classifier.class_count;
}

void ArchitectureSpec::validate() const {
  if (input.channels == 0 || input.height == 0 || input.width == 0) {
    throw Error("input resolution must be positive");
  }
  if (conv_layers.empty()) throw Error("architecture needs at least one conv layer");
  if (classifier.class_count < 2) throw Error("classifier needs at least two classes");
  std::size_t channels = input.channels, h = input.height, w = input.width;
  for (std::size_t i = 0; i < conv_layers.size(); ++i) {
    const auto& c = conv_layers[i];
    if (c.out_channels < 1) throw Error("conv layer " + std::to_string(i + 1) + " has no kernels");
    if (c.kernel_extent % 2 == 0) throw Error("kernel extent must be odd");
    if (c.in_channels != channels) {
      throw Error("conv layer " + std::to_string(i + 1) + " expects " + std::to_string(c.in_channels) +
                  " input channels but receives " + std::to_string(channels));
    }
    if (c.pool_after) {
      if (h < 2 || w < 2) {
        throw Error("input resolution too small: pooling after conv layer " + std::to_string(i + 1) +
                    " sees " + std::to_string(h) + "x" + std::to_string(w));
      }
      h /= 2;
      w /= 2;
    }
    channels = c.out_channels;
  }
  for (auto hs : classifier.hidden_sizes) {
    if (hs == 0) throw Error("classifier hidden size must be positive");
  }
}

void to_json(nlohmann::json& j, const ArchitectureSpec& spec) {
  nlohmann::json conv = nlohmann::json::array();
  for (const auto& c : spec.conv_layers) {
    conv.push_back({{"in", c.in_channels}, {"out", c.out_channels}, {"kernel", c.kernel_extent},
                    {"pool", c.pool_after}});
  }
  j = {{"preset", spec.preset},
       {"input", {spec.input.channels, spec.input.height, spec.input.width}},
       {"conv", conv},
       {"classifier", {{"hidden", spec.classifier.hidden_sizes}, {"classes", spec.classifier.class_count}}}};
}

void from_json(const nlohmann::json& j, ArchitectureSpec& spec) {
  spec.preset = j.at("preset").get<std::string>();
  const auto& in = j.at("input");
  spec.input = {in.at(0).get<std::size_t>(), in.at(1).get<std::size_t>(), in.at(2).get<std::size_t>()};
  spec.conv_layers.clear();
  for (const auto& c : j.at("conv")) {
    spec.conv_layers.push_back({c.at("in").get<std::size_t>(), c.at("out").get<std::size_t>(),
                                c.at("kernel").get<std::size_t>(), c.at("pool").get<bool>()});
  }
  spec.classifier.hidden_sizes = j.at("classifier").at("hidden").get<std::vector<std::size_t>>();
  spec.classifier.class_count = j.at("classifier").at("classes").get<std::size_t>();
}

std::size_t ModelState::parameter_count() const {
  std::size_t total = 0;
  for (const auto& c : conv) total += c.kernels.size() + c.bias.size();
  for (const auto& d : classifier) total += d.weights.size() + d.bias.size();
  return total;
}

void ModelState::validate() const {
  spec.validate();
  if (conv.size() != spec.conv_layers.size()) throw Error("conv parameter count disagrees with spec");
  for (std::size_t i = 0; i < conv.size(); ++i) {
    const auto& s = spec.conv_layers[i];
    const Shape expect{s.out_channels, s.in_channels, s.kernel_extent, s.kernel_extent};
    if (conv[i].kernels.shape() != expect || conv[i].bias.shape() != Shape{s.out_channels}) {
      throw Error("conv layer " + std::to_string(i + 1) + " tensors " +
                  shape_to_string(conv[i].kernels.shape()) + " disagree with spec " +
                  shape_to_string(expect));
    }
    conv[i].kernels.require_finite("conv" + std::to_string(i + 1) + " kernels");
    conv[i].bias.require_finite("conv" + std::to_string(i + 1) + " bias");
  }
  const auto& cls = spec.classifier;
  if (classifier.size() != cls.hidden_sizes.size() + 1) {
    throw Error("classifier layer count disagrees with spec");
  }
  std::size_t in = spec.flattened_size();
  for (std::size_t i = 0; i < classifier.size(); ++i) {
    const std::size_t out = i < cls.hidden_sizes.size() ? cls.hidden_sizes[i] : cls.class_count;
    if (classifier[i].weights.shape() != Shape{out, in} || classifier[i].bias.shape() != Shape{out}) {
      throw Error("classifier layer " + std::to_string(i + 1) + " tensors " +
                  shape_to_string(classifier[i].weights.shape()) + " disagree with spec " +
                  shape_to_string({out, in}));
    }
    classifier[i].weights.require_finite("fc" + std::to_string(i + 1) + " weights");
    classifier[i].bias.require_finite("fc" + std::to_string(i + 1) + " bias");
    in = out;
  }
}

KernelSet KernelSet::make(std::size_t layer, std::vector<std::size_t> kernels) {
  std::sort(kernels.begin(), kernels.end());
  if (std::adjacent_find(kernels.begin(), kernels.end()) != kernels.end()) {
    throw Error("kernel set for layer " + std::to_string(layer) + " contains duplicates");
  }
  return KernelSet{layer, std::move(kernels)};
}

bool KernelSet::contains(std::size_t kernel) const {
  return std::binary_search(kernels.begin(), kernels.end(), kernel);
}

ArchitectureSpec preset_spec(std::string_view name, InputResolution input, std::size_t class_count) {
  ArchitectureSpec spec;
  spec.preset = std::string(name);
  spec.input = input;
  spec.classifier.class_count = class_count;
  std::size_t channels = input.channels;
  auto add = [&](std::size_t out, bool pool) {
    spec.conv_layers.push_back({channels, out, 3, pool});
    channels = out;
  };
  if (name == "vgg16") {
    for (std::size_t i = 0; i < std::size(kVgg16Kernels); ++i) {
      const bool pool = std::find(std::begin(kVgg16PoolAfter), std::end(kVgg16PoolAfter), i + 1) !=
                        std::end(kVgg16PoolAfter);
      add(kVgg16Kernels[i], pool);
    }
    spec.classifier.hidden_sizes = {4096, 4096};
  } else if (name == "tinyvgg") {
    add(8, false);
    add(8, true);
    add(16, false);
    add(16, true);
    spec.classifier.hidden_sizes = {32};
  } else {
    throw Error("unknown preset '" + std::string(name) + "' (expected vgg16 or tinyvgg)");
  }
  spec.validate();
  return spec;
}

ModelState build_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelState model;
  model.spec = spec;
  std::mt19937_64 rng(seed);
  for (const auto& c : spec.conv_layers) {
    const std::size_t area = c.kernel_extent * c.kernel_extent;
    ConvParams p{Tensor({c.out_channels, c.in_channels, c.kernel_extent, c.kernel_extent}),
                 Tensor({c.out_channels})};
    fill_uniform(p.kernels, glorot_limit(c.in_channels * area, c.out_channels * area), rng);
    model.conv.push_back(std::move(p));
  }
  init_classifier(model, rng);
  return model;
}

ModelState build_preset(std::string_view name, InputResolution input, std::size_t class_count,
                        std::uint64_t seed) {
  return build_model(preset_spec(name, input, class_count), seed);
}

Tensor forward_range(const ModelState& model, const Tensor& activations, std::size_t from_layer,
                     std::size_t to_layer) {
  const std::size_t L = model.spec.conv_count();
  const std::size_t last = L + model.classifier.size();
  if (to_layer == 0) to_layer = last;
  if (from_layer > to_layer || to_layer > last) {
    throw Error("forward range [" + std::to_string(from_layer) + "," + std::to_string(to_layer) +
                "] invalid for " + std::to_string(last) + " layers");
  }
  Tensor x = activations;
  for (std::size_t layer = from_layer + 1; layer <= to_layer; ++layer) {
    x = layer <= L ? apply_conv_layer(model, x, layer - 1) : apply_dense_layer(model, x, layer - L - 1);
  }
  return x;
}

Tensor forward_to_layer(const ModelState& model, const Tensor& images, std::size_t layer) {
  const std::size_t L = model.spec.conv_count();
  if (layer < 1 || layer > L + 1) {
    throw Error("layer " + std::to_string(layer) + " out of range [1," + std::to_string(L + 1) + "]");
  }
  check_images(model, images);
  return forward_range(model, images, 0, layer);
}

Tensor forward_logits(const ModelState& model, const Tensor& images) {
  check_images(model, images);
  return forward_range(model, images, 0);
}

Tensor conv_relu_output(const ModelState& model, const Tensor& images, std::size_t layer) {
  const std::size_t L = model.spec.conv_count();
  if (layer < 1 || layer > L) {
    throw Error("conv layer " + std::to_string(layer) + " out of range [1," + std::to_string(L) + "]");
  }
  check_images(model, images);
  Tensor x = forward_range(model, images, 0, layer - 1);
  const auto& p = model.conv[layer - 1];
  return ops::relu(ops::conv2d(x, p.kernels, p.bias));
}

void zero_channels(Tensor& activations, const std::vector<std::size_t>& channels) {
  if (activations.rank() < 2) throw Error("zero_channels needs a [b,c,...] tensor");
  const std::size_t b = activations.dim(0), c = activations.dim(1);
  const std::size_t plane = activations.size() / (b * c);
  for (auto ch : channels) {
    if (ch >= c) throw Error("channel " + std::to_string(ch) + " out of range");
    for (std::size_t n = 0; n < b; ++n) {
      std::fill_n(activations.data() + (n * c + ch) * plane, plane, 0.0f);
    }
  }
}

Tensor forward_logits_masked(const ModelState& model, const Tensor& images, const KernelSet& mask) {
  const std::size_t L = model.spec.conv_count();
  if (mask.layer < 1 || mask.layer > L) throw Error("mask layer out of range");
  Tensor a = forward_to_layer(model, images, mask.layer);
  zero_channels(a, mask.kernels);
  return forward_range(model, a, mask.layer);
}

namespace {

void check_removal(const ModelState& model, const KernelSet& removal) {
  const std::size_t L = model.spec.conv_count();
  if (removal.layer < 1 || removal.layer > L) {
    throw Error("prune layer " + std::to_string(removal.layer) + " out of range [1," +
                std::to_string(L) + "]");
  }
  const std::size_t k = model.spec.conv_layers[removal.layer - 1].out_channels;
  for (std::size_t i = 0; i < removal.kernels.size(); ++i) {
    if (removal.kernels[i] >= k) {
      throw Error("kernel " + std::to_string(removal.kernels[i]) + " out of range for layer " +
                  std::to_string(removal.layer) + " with " + std::to_string(k) + " kernels");
    }
    if (i > 0 && removal.kernels[i] <= removal.kernels[i - 1]) {
      throw Error("kernel set must be sorted and duplicate-free");
    }
  }
  if (removal.kernels.size() >= k) {
    throw Error("cannot remove all " + std::to_string(k) + " kernels of layer " +
                std::to_string(removal.layer));
  }
}

// Keeps slices `keep` along `axis` of a tensor.
Tensor keep_along(const Tensor& t, std::size_t axis, const std::vector<std::size_t>& keep) {
  Shape shape = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t extent = shape[axis];
  shape[axis] = keep.size();
  Tensor out(shape);
  float* dst = out.data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (auto k : keep) {
      std::copy_n(t.data() + (o * extent + k) * inner, inner, dst);
      dst += inner;
    }
  }
  return out;
}

}  // namespace

ModelState prune_layer(const ModelState& model, const KernelSet& removal) {
  check_removal(model, removal);
  if (removal.empty()) return model;
  const std::size_t l = removal.layer - 1;
  const std::size_t L = model.spec.conv_count();
  const std::size_t k = model.spec.conv_layers[l].out_channels;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < k; ++i) {
    if (!removal.contains(i)) keep.push_back(i);
  }

  ModelState out = model;
  out.spec.conv_layers[l].out_channels = keep.size();
  out.conv[l].kernels = keep_along(model.conv[l].kernels, 0, keep);
  out.conv[l].bias = keep_along(model.conv[l].bias, 0, keep);
  if (l + 1 < L) {
    out.spec.conv_layers[l + 1].in_channels = keep.size();
    out.conv[l + 1].kernels = keep_along(model.conv[l + 1].kernels, 1, keep);
  } else {
    // Flattened index of channel c, position p is c * plane + p.
    const auto e = model.spec.layer_output(L);
    const Tensor& w = model.classifier.front().weights;
    const std::size_t units = w.dim(0);
    Tensor view = w.reshaped({units, e.channels, e.height * e.width});
    Tensor kept = keep_along(view, 1, keep);
    out.classifier.front().weights = kept.reshaped({units, keep.size() * e.height * e.width});
  }
  out.spec.validate();
  return out;
}

ModelState mask_layer(const ModelState& model, const KernelSet& removal) {
  check_removal(model, removal);
  ModelState out = model;
  auto& p = out.conv[removal.layer - 1];
  const std::size_t per_kernel = p.kernels.size() / p.kernels.dim(0);
  for (auto k : removal.kernels) {
    std::fill_n(p.kernels.data() + k * per_kernel, per_kernel, 0.0f);
    p.bias[k] = 0.0f;
  }
  return out;
}

ArchitectureSpec uniformly_pruned_spec(const ArchitectureSpec& spec, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw Error("pruning fraction must lie in [0,1)");
  ArchitectureSpec out = spec;
  for (std::size_t l = 0; l < out.conv_layers.size(); ++l) {
    auto& layer = out.conv_layers[l];
    const auto removed = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(layer.out_channels)));
    layer.out_channels -= removed;
    if (layer.out_channels == 0) throw Error("pruning would remove every kernel of layer " + std::to_string(l + 1));
    if (l + 1 < out.conv_layers.size()) out.conv_layers[l + 1].in_channels = layer.out_channels;
  }
  out.validate();
  return out;
}

FlopsReport flops(const ArchitectureSpec& spec) {
  spec.validate();
  FlopsReport report;
  for (std::size_t l = 1; l <= spec.conv_count(); ++l) {
    const auto& c = spec.conv_layers[l - 1];
    const auto e = spec.conv_input(l);
    const std::uint64_t f = 2ULL * e.height * e.width * c.kernel_extent * c.kernel_extent *
                            c.in_channels * c.out_channels;
    report.layers.push_back({layer_name(spec, l), false, f});
    report.conv_total += f;
  }
  std::size_t in = spec.flattened_size();
  std::vector<std::size_t> outs = spec.classifier.hidden_sizes;
  outs.push_back(spec.classifier.class_count);
  for (std::size_t i = 0; i < outs.size(); ++i) {
    const std::uint64_t f = 2ULL * in * outs[i];
    report.layers.push_back({"fc" + std::to_string(i + 1), true, f});
    report.total += f;
    in = outs[i];
  }
  report.total += report.conv_total;
  return report;
}

ModelState glorot_reinit_classifier(const ModelState& model, std::uint64_t seed) {
  ModelState out = model;
  std::mt19937_64 rng(seed);
  init_classifier(out, rng);
  return out;
}

std::string layer_name(const ArchitectureSpec& spec, std::size_t layer) {
  const std::size_t L = spec.conv_count();
  if (layer >= 1 && layer <= L) return "conv" + std::to_string(layer);
  if (layer > L && layer <= L + spec.classifier.hidden_sizes.size() + 1) {
    return "fc" + std::to_string(layer - L);
  }
  throw Error("layer " + std::to_string(layer) + " has no name");
}

}  // namespace pruneforge
