#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "pruneforge/tensor.hpp"

namespace pruneforge {

/// Images [batch, channels, height, width] with one class index per image.
struct LabeledBatch {
  Tensor images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  void validate(std::size_t class_count) const;
};

struct Dataset {
  Tensor images;  // [n, c, h, w]
  std::vector<int> labels;
  std::vector<std::string> class_names;

  std::size_t size() const { return labels.size(); }
  std::size_t class_count() const { return class_names.size(); }
  std::vector<std::size_t> class_counts() const;
  LabeledBatch batch(std::span<const std::size_t> indices) const;
  LabeledBatch all() const;
  /// Indices of samples with the given label, ascending.
  std::vector<std::size_t> indices_of_class(int label) const;
  void validate() const;
};

// ---- raw tensor sample files ("TNSR") ----------------------------------

/// "TNSR", u32 rank, u64 extents[rank], little-endian float32 values.
void write_sample(const Tensor& sample, const std::filesystem::path& path);
Tensor read_sample(const std::filesystem::path& path);

// ---- manifest -----------------------------------------------------------

struct ManifestEntry {
  std::string path;   // relative to the manifest's directory unless absolute
  int label = 0;
  std::string split;  // optional: "train", "test" or empty
};

struct DatasetManifest {
  std::vector<std::string> class_names;
  std::vector<ManifestEntry> entries;
};

void to_json(nlohmann::json& j, const DatasetManifest& m);
void from_json(const nlohmann::json& j, DatasetManifest& m);

/// Reads a JSON manifest and every sample it references. An empty
/// `class_names` list means the class count is inferred from the labels.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `dataset` as one sample file per image plus `manifest.json`
/// under `directory`. Returns the manifest path.
std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& directory);

// ---- splits ---------------------------------------------------------------

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

struct SplitPlan {
  std::uint64_t seed = 0;
  double train_fraction = 0.0;
  std::vector<Split> splits;
};

/// Stratified random splits: each class contributes floor(n_j * fraction)
/// training samples per split; the rest are test samples.
SplitPlan make_splits(const Dataset& dataset, std::size_t split_count, double train_fraction,
                      std::uint64_t seed);

// ---- normalization ------------------------------------------------------

struct NormalizationRecord {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<std::string> warnings;
};

void to_json(nlohmann::json& j, const NormalizationRecord& r);

struct NormalizedDataset {
  Dataset dataset;
  NormalizationRecord record;
};

/// Per-channel (x - mean) / std with statistics from `train_indices` only,
/// applied to every sample. Zero-variance channels use a unit divisor.
NormalizedDataset normalize(const Dataset& dataset, std::span<const std::size_t> train_indices);

Dataset apply_normalization(const Dataset& dataset, const NormalizationRecord& record);

// ---- synthetic data -----------------------------------------------------

struct SyntheticConfig {
  std::size_t class_count = 3;
  std::size_t samples_per_class = 200;
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  double noise = 0.25;
  std::uint64_t seed = 0;
};

/// Geometric shapes (one shape family per class) with random
/// position, size and per-channel intensity on a noisy background.
/// Supports up to 8 classes; channels=1 gives grayscale images.
Dataset make_synthetic(const SyntheticConfig& config);

/// Parses "synthetic:classes=3,per_class=200,size=16,channels=3,noise=0.25,seed=7".
/// Missing keys take SyntheticConfig defaults.
SyntheticConfig parse_synthetic_spec(const std::string& spec);

/// Loads a manifest path or builds a "synthetic:..." dataset.
Dataset resolve_dataset(const std::string& reference);

}  // namespace pruneforge
