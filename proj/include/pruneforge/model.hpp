#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "pruneforge/tensor.hpp"

namespace pruneforge {

struct ConvLayerSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_extent = 3;
  bool pool_after = false;

  bool operator==(const ConvLayerSpec&) const = default;
};

struct ClassifierSpec {
  std::vector<std::size_t> hidden_sizes;
  std::size_t class_count = 0;

  bool operator==(const ClassifierSpec&) const = default;
};

struct InputResolution {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  bool operator==(const InputResolution&) const = default;
};

/// Shape of one layer's output for a single image. Classifier outputs use
/// channels = units, height = width = 1.
struct LayerExtent {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;

  std::size_t size() const { return channels * height * width; }
};

/// Layered description of a VGG-style network.
///
/// Layer indices are 1-based throughout the library: layers 1..L are the
/// convolutional layers (conv -> ReLU -> optional 2x2 max-pool), and layer
/// L+1 is the first classifier layer. The conv/classifier boundary flattens
/// activations channel-major: (channel, row, column).
struct ArchitectureSpec {
  std::string preset = "custom";
  InputResolution input;
  std::vector<ConvLayerSpec> conv_layers;
  ClassifierSpec classifier;

  std::size_t conv_count() const { return conv_layers.size(); }
  /// Output extent of layer l in [1, L+1], after ReLU and pooling.
  LayerExtent layer_output(std::size_t layer) const;
  /// Spatial extent seen by conv layer l (before its pooling).
  LayerExtent conv_input(std::size_t layer) const;
  std::size_t flattened_size() const;
  std::size_t total_kernels() const;
  std::size_t parameter_count() const;

  /// Throws Error on broken channel chaining or unusable resolutions.
  void validate() const;

  bool operator==(const ArchitectureSpec&) const = default;
};

void to_json(nlohmann::json& j, const ArchitectureSpec& spec);
void from_json(const nlohmann::json& j, ArchitectureSpec& spec);

struct ConvParams {
  Tensor kernels;  // [out, in, k, k]
  Tensor bias;     // [out]
};

struct DenseParams {
  Tensor weights;  // [out, in]
  Tensor bias;     // [out]
};

/// Architecture plus trainable parameters. Treated as an immutable value by
/// every library operation; functions return new states.
struct ModelState {
  ArchitectureSpec spec;
  std::vector<ConvParams> conv;
  std::vector<DenseParams> classifier;

  std::size_t parameter_count() const;
  /// Checks every tensor shape against `spec` and that all values are finite.
  void validate() const;
};

/// Sorted, duplicate-free kernel indices (0-based) of one layer.
struct KernelSet {
  std::size_t layer = 0;
  std::vector<std::size_t> kernels;

  static KernelSet make(std::size_t layer, std::vector<std::size_t> kernels);
  bool empty() const { return kernels.empty(); }
  bool contains(std::size_t kernel) const;
  bool operator==(const KernelSet&) const = default;
};

/// "vgg16" (13 conv layers, 4096-4096 classifier) or "tinyvgg"
/// (conv 8-8-16-16, pools after layers 2 and 4, one hidden layer of 32).
ArchitectureSpec preset_spec(std::string_view name, InputResolution input, std::size_t class_count);

/// Glorot-uniform weights, zero biases, deterministic in `seed`.
ModelState build_model(const ArchitectureSpec& spec, std::uint64_t seed);
ModelState build_preset(std::string_view name, InputResolution input, std::size_t class_count,
                        std::uint64_t seed);

/// Activations at the output of layer l (1..L+1), including ReLU and pooling.
Tensor forward_to_layer(const ModelState& model, const Tensor& images, std::size_t layer);

/// Continues from activations at the output of layer `from_layer` (0 = raw
/// images) through layer `to_layer`; to_layer == 0 means "to the logits".
Tensor forward_range(const ModelState& model, const Tensor& activations, std::size_t from_layer,
                     std::size_t to_layer = 0);

Tensor forward_logits(const ModelState& model, const Tensor& images);

/// Post-ReLU output of conv layer l before its pooling step.
Tensor conv_relu_output(const ModelState& model, const Tensor& images, std::size_t layer);

/// Zeroes the listed channels of a [b, c, ...] activation tensor in place.
void zero_channels(Tensor& activations, const std::vector<std::size_t>& channels);

/// Logits with the output channels of `mask.layer` zeroed after its ReLU and pooling.
Tensor forward_logits_masked(const ModelState& model, const Tensor& images, const KernelSet& mask);

/// Returns a new model with the kernels in `removal` deleted from their layer,
/// the matching input-channel slices deleted from the next conv layer, or the
/// matching flattened columns deleted from the first classifier layer when
/// the last conv layer is pruned. All other tensors are copied unchanged.
ModelState prune_layer(const ModelState& model, const KernelSet& removal);

/// Zeroes the kernel weights and biases in `removal` without changing the
/// architecture; the masked channels then output exact zeros after ReLU.
ModelState mask_layer(const ModelState& model, const KernelSet& removal);

struct LayerFlops {
  std::string name;
  bool classifier = false;
  std::uint64_t flops = 0;
};

/// Multiply-adds counted as 2 FLOPs; ReLU, pooling and bias additions are
/// not counted.
struct FlopsReport {
  std::vector<LayerFlops> layers;
  std::uint64_t conv_total = 0;
  std::uint64_t total = 0;  // conv + classifier
  static constexpr const char* convention =
      "2*H*W*k*k*Cin*Cout per conv layer, 2*in*out per classifier layer; "
      "ReLU, pooling and bias additions excluded";
};

FlopsReport flops(const ArchitectureSpec& spec);

/// Architecture after removing floor(fraction * K_l) kernels from every conv
/// layer (channel counts only; used for FLOPs accounting).
ArchitectureSpec uniformly_pruned_spec(const ArchitectureSpec& spec, double fraction);

/// Classifier weights uniform in +-sqrt(6/(fan_in+fan_out)), biases zero;
/// conv layers copied untouched.
ModelState glorot_reinit_classifier(const ModelState& model, std::uint64_t seed);

/// Name used for a layer's tensors, e.g. "conv3", "fc1".
std::string layer_name(const ArchitectureSpec& spec, std::size_t layer);

}  // namespace pruneforge
