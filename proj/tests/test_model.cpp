#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles.hpp"
#include "pruneforge/metrics.hpp"
#include "pruneforge/model.hpp"

using namespace pruneforge;

namespace {

Tensor ramp(Shape shape, float scale = 0.01f) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = scale * static_cast<float>(i % 97) - 0.3f;
  return t;
}

}  // namespace

TEST_CASE("tinyvgg preset layout") {
  const ArchitectureSpec spec = preset_spec("tinyvgg", {1, 16, 16}, 3);
  REQUIRE(spec.conv_count() == 4);
  CHECK(spec.conv_layers[0].out_channels == 8);
  CHECK(spec.conv_layers[3].out_channels == 16);
  CHECK(spec.conv_layers[1].pool_after);
  CHECK_FALSE(spec.conv_layers[2].pool_after);
  CHECK(spec.flattened_size() == 16 * 4 * 4);
  CHECK(spec.total_kernels() == 48);
  CHECK(spec.layer_output(2).height == 8);
  CHECK(spec.layer_output(5).channels == 32);
  CHECK(spec.conv_input(3).height == 8);
  CHECK(layer_name(spec, 4) == "conv4");
  CHECK(layer_name(spec, 5) == "fc1");
}

TEST_CASE("vgg16 preset layout") {
  const ArchitectureSpec spec = preset_spec("vgg16", {3, 224, 224}, 1000);
  REQUIRE(spec.conv_count() == 13);
  CHECK(spec.total_kernels() == 4224);
  CHECK(spec.flattened_size() == 512 * 7 * 7);
  CHECK(spec.classifier.hidden_sizes == std::vector<std::size_t>{4096, 4096});
  // The canonical ImageNet VGG16 has 138,357,544 parameters.
  CHECK(spec.parameter_count() == 138357544);
}

TEST_CASE("unknown presets and broken specs are rejected") {
  CHECK_THROWS_AS(preset_spec("resnet", {3, 32, 32}, 10), Error);
  ArchitectureSpec spec = preset_spec("tinyvgg", {1, 16, 16}, 3);
  spec.conv_layers[2].in_channels = 9;
  CHECK_THROWS_AS(spec.validate(), Error);
  CHECK_THROWS_AS(preset_spec("vgg16", {3, 16, 16}, 10), Error);
}

TEST_CASE("architecture JSON round-trips") {
  const ArchitectureSpec spec = preset_spec("tinyvgg", {3, 16, 16}, 4);
  const nlohmann::json j = spec;
  CHECK(j.get<ArchitectureSpec>() == spec);
}

TEST_CASE("tinyvgg FLOPs by hand") {
  const FlopsReport r = flops(preset_spec("tinyvgg", {1, 16, 16}, 3));
  REQUIRE(r.layers.size() == 6);
  CHECK(r.layers[0].flops == 2ull * 16 * 16 * 9 * 1 * 8);
  CHECK(r.layers[1].flops == 2ull * 16 * 16 * 9 * 8 * 8);
  CHECK(r.layers[2].flops == 2ull * 8 * 8 * 9 * 8 * 16);
  CHECK(r.layers[3].flops == 2ull * 8 * 8 * 9 * 16 * 16);
  CHECK(r.layers[4].flops == 2ull * 256 * 32);
  CHECK(r.layers[5].flops == 2ull * 32 * 3);
  CHECK(r.conv_total == 774144);
  CHECK(r.total == 790720);
}

TEST_CASE("vgg16 half-pruned FLOPs reduction") {
  for (const auto& [side, expected] : {std::pair{200, 74.60}, std::pair{96, 74.25}}) {
    const ArchitectureSpec spec = preset_spec("vgg16", {3, std::size_t(side), std::size_t(side)}, 9);
    const ReductionPercentages red = reduction_percentages(spec, uniformly_pruned_spec(spec, 0.5));
    INFO("side " << side);
    CHECK(red.kernel_reduction == 50.0);
    CHECK(std::abs(red.gflops_reduction - expected) < 0.01);
  }
}

TEST_CASE("uniform pruning removes floor(fraction * K) kernels per layer") {
  const ArchitectureSpec spec = preset_spec("tinyvgg", {1, 16, 16}, 3);
  const ArchitectureSpec pruned = uniformly_pruned_spec(spec, 0.3);
  CHECK(pruned.conv_layers[0].out_channels == 6);
  CHECK(pruned.conv_layers[1].in_channels == 6);
  CHECK(pruned.conv_layers[3].out_channels == 12);
  CHECK(uniformly_pruned_spec(spec, 0.0) == spec);
  CHECK_THROWS_AS(uniformly_pruned_spec(spec, 1.0), Error);
}

TEST_CASE("model construction is deterministic in the seed") {
  const ModelState a = build_preset("tinyvgg", {1, 16, 16}, 3, 5);
  const ModelState b = build_preset("tinyvgg", {1, 16, 16}, 3, 5);
  const ModelState c = build_preset("tinyvgg", {1, 16, 16}, 3, 6);
  CHECK(bit_equal(a.conv[2].kernels, b.conv[2].kernels));
  CHECK_FALSE(bit_equal(a.conv[2].kernels, c.conv[2].kernels));
  a.validate();
  for (const auto& conv : a.conv) CHECK(conv.bias == Tensor(conv.bias.shape()));
}

TEST_CASE("kernel sets are sorted and duplicate-free") {
  const KernelSet s = KernelSet::make(2, {5, 1, 3});
  CHECK(s.kernels == std::vector<std::size_t>{1, 3, 5});
  CHECK(s.contains(3));
  CHECK_FALSE(s.contains(2));
  CHECK_THROWS_AS(KernelSet::make(2, {1, 1}), Error);
}

TEST_CASE("structural pruning reshapes the pruned and the following layer") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  const ModelState p = prune_layer(m, KernelSet::make(2, {0, 3, 7}));
  CHECK(p.spec.conv_layers[1].out_channels == 5);
  CHECK(p.conv[1].kernels.shape() == Shape{5, 8, 3, 3});
  CHECK(p.conv[2].kernels.shape() == Shape{16, 5, 3, 3});
  CHECK(bit_equal(p.conv[0].kernels, m.conv[0].kernels));
  CHECK(bit_equal(p.conv[3].kernels, m.conv[3].kernels));
  // Kept kernel 1 of the old layer is kernel 0 of the new one.
  CHECK(p.conv[1].kernels.at({0, 4, 1, 1}) == m.conv[1].kernels.at({1, 4, 1, 1}));
  // Input slice 1 of layer 3 came from old channel 1.
  CHECK(p.conv[2].kernels.at({7, 0, 2, 0}) == m.conv[2].kernels.at({7, 1, 2, 0}));
  p.validate();
}

TEST_CASE("pruning the last conv layer deletes flattened classifier columns") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  const ModelState p = prune_layer(m, KernelSet::make(4, {1}));
  CHECK(p.classifier[0].weights.shape() == Shape{32, 15 * 16});
  // Column block of channel 0 is unchanged; channel 2's block moves to channel 1's slot.
  CHECK(p.classifier[0].weights.at({3, 5}) == m.classifier[0].weights.at({3, 5}));
  CHECK(p.classifier[0].weights.at({3, 16 + 5}) == m.classifier[0].weights.at({3, 32 + 5}));
}

TEST_CASE("pruning rejects invalid removal sets") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  CHECK_THROWS_AS(prune_layer(m, KernelSet::make(5, {0})), Error);
  CHECK_THROWS_AS(prune_layer(m, KernelSet::make(1, {8})), Error);
  CHECK_THROWS_AS(prune_layer(m, KernelSet::make(1, {0, 1, 2, 3, 4, 5, 6, 7})), Error);
}

TEST_CASE("an empty removal set is the identity") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  const ModelState p = prune_layer(m, KernelSet::make(3, {}));
  CHECK(p.spec == m.spec);
  CHECK(bit_equal(p.conv[2].kernels, m.conv[2].kernels));
}

TEST_CASE("zero-masking and structural pruning give the same logits") {
  const auto r = oracle::surgery_oracle(15, 99);
  CHECK(r.cases == 15);
  CHECK(r.last_layer_cases >= 5);
  CHECK(r.worst_logit_difference <= 1e-6);
}

TEST_CASE("weight masking matches activation masking") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 3);
  const Tensor images = ramp({2, 1, 16, 16});
  const KernelSet mask = KernelSet::make(3, {2, 9});
  CHECK(max_abs_diff(forward_logits(mask_layer(m, mask), images), forward_logits_masked(m, images, mask)) <= 1e-6);
}

TEST_CASE("forward_range composes with forward_to_layer") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 4);
  const Tensor images = ramp({2, 1, 16, 16});
  const Tensor mid = forward_to_layer(m, images, 2);
  CHECK(mid.shape() == Shape{2, 8, 8, 8});
  CHECK(bit_equal(forward_range(m, mid, 2), forward_logits(m, images)));
  CHECK(forward_range(m, images, 0, 5).shape() == Shape{2, 32});
  CHECK(conv_relu_output(m, images, 2).shape() == Shape{2, 8, 16, 16});
  CHECK_THROWS_AS(forward_to_layer(m, images, 6), Error);
  CHECK_THROWS_AS(forward_logits(m, ramp({2, 3, 16, 16})), Error);
}

TEST_CASE("classifier reinitialization leaves conv layers untouched") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 4);
  const ModelState r = glorot_reinit_classifier(m, 77);
  CHECK(bit_equal(r.conv[1].kernels, m.conv[1].kernels));
  CHECK_FALSE(bit_equal(r.classifier[0].weights, m.classifier[0].weights));
  const double bound = std::sqrt(6.0 / (256.0 + 32.0));
  for (float w : r.classifier[0].weights.values()) CHECK(std::abs(w) <= bound);
}
