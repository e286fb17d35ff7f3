#include "pruneforge/dataio.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "pruneforge/io.hpp"

namespace pruneforge {

void LabeledBatch::validate(std::size_t class_count) const {
  if (images.rank() != 4) throw Error("batch images must be [b,c,h,w]");
  if (images.dim(0) != labels.size()) {
    throw Error("batch has " + std::to_string(images.dim(0)) + " images but " +
                std::to_string(labels.size()) + " labels");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= class_count) {
      throw Error("label " + std::to_string(l) + " outside [0," + std::to_string(class_count) + ")");
    }
  }
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(class_count(), 0);
  for (int l : labels) ++counts.at(static_cast<std::size_t>(l));
  return counts;
}

LabeledBatch Dataset::batch(std::span<const std::size_t> indices) const {
  LabeledBatch b{images.gather_leading(indices), {}};
  b.labels.reserve(indices.size());
  for (auto i : indices) b.labels.push_back(labels.at(i));
  return b;
}

LabeledBatch Dataset::all() const { return LabeledBatch{images, labels}; }

std::vector<std::size_t> Dataset::indices_of_class(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

void Dataset::validate() const {
  if (labels.empty()) throw Error("dataset is empty");
  LabeledBatch{images, labels}.validate(class_count());
  const auto counts = class_counts();
  for (std::size_t j = 0; j < counts.size(); ++j) {
    if (counts[j] == 0) throw Error("class " + std::to_string(j) + " (" + class_names[j] + ") has no samples");
  }
}

// ---- sample files -------------------------------------------------------

void write_sample(const Tensor& sample, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.raw("TNSR");
  w.u32(static_cast<std::uint32_t>(sample.rank()));
  for (auto e : sample.shape()) w.u64(e);
  for (float v : sample.values()) w.f32(v);
  io::write_file_atomic(path, w.take());
}

Tensor read_sample(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  if (r.raw(4) != "TNSR") throw Error(path.string() + ": bad magic bytes");
  Shape shape(r.u32());
  for (auto& e : shape) e = r.u64();
  const std::size_t n = shape_size(shape);
  if (r.remaining() != 4 * n) {
    throw Error(path.string() + ": expected " + std::to_string(4 * n) + " data bytes, found " +
                std::to_string(r.remaining()));
  }
  std::vector<float> values(n);
  for (auto& v : values) v = r.f32();
  return Tensor(std::move(shape), std::move(values));
}

// ---- manifest -----------------------------------------------------------

void to_json(nlohmann::json& j, const DatasetManifest& m) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : m.entries) {
    nlohmann::json item{{"path", e.path}, {"label", e.label}};
    if (!e.split.empty()) item["split"] = e.split;
    entries.push_back(std::move(item));
  }
  j = {{"format", "pruneforge-manifest"}, {"version", 1}, {"class_names", m.class_names}, {"entries", entries}};
}

void from_json(const nlohmann::json& j, DatasetManifest& m) {
  m.class_names = j.value("class_names", std::vector<std::string>{});
  m.entries.clear();
  for (const auto& item : j.at("entries")) {
    ManifestEntry e;
    e.path = item.at("path").get<std::string>();
    e.label = item.at("label").get<int>();
    e.split = item.value("split", std::string{});
    m.entries.push_back(std::move(e));
  }
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  DatasetManifest manifest;
  try {
    manifest = nlohmann::json::parse(io::read_file(manifest_path)).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (manifest.entries.empty()) throw Error(manifest_path.string() + ": manifest has no entries");

  int max_label = -1;
  for (const auto& e : manifest.entries) {
    if (e.label < 0) throw Error("unknown label " + std::to_string(e.label) + " for " + e.path);
    max_label = std::max(max_label, e.label);
  }
  if (manifest.class_names.empty()) {
    for (int j = 0; j <= max_label; ++j) manifest.class_names.push_back("class" + std::to_string(j));
  } else if (static_cast<std::size_t>(max_label) >= manifest.class_names.size()) {
    throw Error("unknown label " + std::to_string(max_label) + ": manifest declares " +
                std::to_string(manifest.class_names.size()) + " classes");
  }

  const auto base = manifest_path.parent_path();
  Dataset ds;
  ds.class_names = manifest.class_names;
  std::vector<float> values;
  Shape sample_shape;
  for (const auto& e : manifest.entries) {
    std::filesystem::path p(e.path);
    if (p.is_relative()) p = base / p;
    if (!std::filesystem::exists(p)) throw Error("missing sample file " + p.string());
    Tensor s = read_sample(p);
    if (s.rank() != 3) throw Error(p.string() + ": sample must be [channels,height,width]");
    if (sample_shape.empty()) {
      sample_shape = s.shape();
    } else if (s.shape() != sample_shape) {
      throw Error(p.string() + ": resolution " + shape_to_string(s.shape()) + " differs from " +
                  shape_to_string(sample_shape));
    }
    values.insert(values.end(), s.values().begin(), s.values().end());
    ds.labels.push_back(e.label);
  }
  Shape shape{ds.labels.size()};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  ds.images = Tensor(std::move(shape), std::move(values));
  ds.validate();
  return ds;
}

std::filesystem::path write_dataset(const Dataset& dataset, const std::filesystem::path& directory) {
  dataset.validate();
  DatasetManifest manifest;
  manifest.class_names = dataset.class_names;
  const std::size_t n = dataset.size();
  for (std::size_t i = 0; i < n; ++i) {
    std::ostringstream name;
    name << "samples/" << i << ".tnsr";
    Tensor s = dataset.images.slice_leading(i, i + 1);
    Shape shape(s.shape().begin() + 1, s.shape().end());
    write_sample(s.reshaped(shape), directory / name.str());
    manifest.entries.push_back({name.str(), dataset.labels[i], ""});
  }
  const auto path = directory / "manifest.json";
  io::write_file_atomic(path, nlohmann::json(manifest).dump(2));
  return path;
}

// ---- splits ---------------------------------------------------------------

SplitPlan make_splits(const Dataset& dataset, std::size_t split_count, double train_fraction,
                      std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw Error("train fraction must lie in (0,1), got " + std::to_string(train_fraction));
  }
  if (split_count == 0) throw Error("split count must be at least 1");
  dataset.validate();
  SplitPlan plan{seed, train_fraction, {}};
  for (std::size_t s = 0; s < split_count; ++s) {
    std::mt19937_64 rng(seed * 1000003ULL + s);
    Split split;
    for (std::size_t j = 0; j < dataset.class_count(); ++j) {
      auto members = dataset.indices_of_class(static_cast<int>(j));
      std::shuffle(members.begin(), members.end(), rng);
      const auto n_train = static_cast<std::size_t>(
          std::floor(static_cast<double>(members.size()) * train_fraction));
      if (n_train == 0) {
        throw Error("class " + dataset.class_names[j] + " has " + std::to_string(members.size()) +
                    " samples, too few for train fraction " + std::to_string(train_fraction));
      }
      split.train.insert(split.train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
      split.test.insert(split.test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    plan.splits.push_back(std::move(split));
  }
  return plan;
}

// ---- normalization ------------------------------------------------------

void to_json(nlohmann::json& j, const NormalizationRecord& r) {
  j = {{"mean", r.mean}, {"std", r.stddev}, {"warnings", r.warnings}};
}

Dataset apply_normalization(const Dataset& dataset, const NormalizationRecord& record) {
  Dataset out = dataset;
  const std::size_t n = out.images.dim(0), c = out.images.dim(1);
  if (record.mean.size() != c) throw Error("normalization record has wrong channel count");
  const std::size_t plane = out.images.size() / (n * c);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      float* p = out.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        p[k] = static_cast<float>((static_cast<double>(p[k]) - record.mean[ch]) / record.stddev[ch]);
      }
    }
  }
  return out;
}

NormalizedDataset normalize(const Dataset& dataset, std::span<const std::size_t> train_indices) {
  if (train_indices.empty()) throw Error("normalize: empty training index list");
  const std::size_t c = dataset.images.dim(1);
  const std::size_t plane = dataset.images.size() / (dataset.images.dim(0) * c);
  NormalizationRecord record;
  record.mean.assign(c, 0.0);
  record.stddev.assign(c, 0.0);
  const double count = static_cast<double>(train_indices.size() * plane);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum = 0.0;
    for (auto i : train_indices) {
      const float* p = dataset.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) sum += p[k];
    }
    const double mean = sum / count;
    double sq = 0.0;
    for (auto i : train_indices) {
      const float* p = dataset.images.data() + (i * c + ch) * plane;
      for (std::size_t k = 0; k < plane; ++k) sq += (p[k] - mean) * (p[k] - mean);
    }
    double sd = std::sqrt(sq / count);
    if (!(sd > 0.0)) {
      record.warnings.push_back("channel " + std::to_string(ch) + " has zero variance; using unit divisor");
      sd = 1.0;
    }
    record.mean[ch] = mean;
    record.stddev[ch] = sd;
  }
  return {apply_normalization(dataset, record), record};
}

// ---- synthetic data -----------------------------------------------------

namespace {

constexpr const char* kShapeNames[] = {"disk", "cross", "hbar",     "square",
                                       "ring", "vbar",  "triangle", "diagonal"};

bool inside_shape(std::size_t shape, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  switch (shape) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return (ax <= 0.3 * r && ay <= r) || (ay <= 0.3 * r && ax <= r);
    case 2: return ax <= r && ay <= 0.3 * r;
    case 3: return ax <= 0.8 * r && ay <= 0.8 * r;
    case 4: {
      const double d = std::sqrt(dx * dx + dy * dy);
      return d <= r && d >= 0.55 * r;
    }
    case 5: return ay <= r && ax <= 0.3 * r;
    case 6: return dy <= r * 0.8 && dy >= -r && ax <= (dy + r) * 0.55;
    case 7: return std::abs(dx - dy) <= 0.45 * r && ax <= r && ay <= r;
    default: return false;
  }
}

}  // namespace

Dataset make_synthetic(const SyntheticConfig& config) {
  if (config.class_count < 2 || config.class_count > std::size(kShapeNames)) {
    throw Error("synthetic data supports 2 to 8 classes");
  }
  if (config.samples_per_class == 0 || config.channels == 0) throw Error("synthetic data needs samples and channels");
  if (config.height < 4 || config.width < 4) throw Error("synthetic images must be at least 4x4");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> noise(0.0, config.noise);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  Dataset ds;
  for (std::size_t j = 0; j < config.class_count; ++j) ds.class_names.emplace_back(kShapeNames[j]);
  const std::size_t n = config.class_count * config.samples_per_class;
  const std::size_t plane = config.height * config.width;
  ds.images = Tensor({n, config.channels, config.height, config.width});
  const double extent = static_cast<double>(std::min(config.height, config.width));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % config.class_count;
    ds.labels.push_back(static_cast<int>(label));
    const double r = extent * (0.22 + 0.14 * unit(rng));
    const double cx = r + (static_cast<double>(config.width) - 2 * r) * unit(rng) - 0.5;
    const double cy = r + (static_cast<double>(config.height) - 2 * r) * unit(rng) - 0.5;
    std::vector<double> color(config.channels);
    for (auto& v : color) v = 0.4 + 0.6 * unit(rng);
    const double background = 0.3 * unit(rng);
    for (std::size_t ch = 0; ch < config.channels; ++ch) {
      float* p = ds.images.data() + (i * config.channels + ch) * plane;
      for (std::size_t y = 0; y < config.height; ++y) {
        for (std::size_t x = 0; x < config.width; ++x) {
          const bool in = inside_shape(label, static_cast<double>(x) - cx, static_cast<double>(y) - cy, r);
          p[y * config.width + x] = static_cast<float>((in ? color[ch] : background) + noise(rng));
        }
      }
    }
  }
  return ds;
}

SyntheticConfig parse_synthetic_spec(const std::string& spec) {
  const std::string prefix = "synthetic:";
  if (spec.rfind("synthetic", 0) != 0) throw Error("not a synthetic dataset reference: " + spec);
  SyntheticConfig cfg;
  if (spec.size() <= prefix.size()) return cfg;
  std::stringstream ss(spec.substr(prefix.size()));
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error("synthetic option without value: " + item);
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    try {
      if (key == "classes") cfg.class_count = std::stoul(value);
      else if (key == "per_class") cfg.samples_per_class = std::stoul(value);
      else if (key == "size") cfg.height = cfg.width = std::stoul(value);
      else if (key == "channels") cfg.channels = std::stoul(value);
      else if (key == "noise") cfg.noise = std::stod(value);
      else if (key == "seed") cfg.seed = std::stoull(value);
      else throw Error("unknown synthetic option: " + key);
    } catch (const std::logic_error&) {
      throw Error("bad value for synthetic option " + key + ": " + value);
    }
  }
  return cfg;
}

Dataset resolve_dataset(const std::string& reference) {
  if (reference.rfind("synthetic", 0) == 0) return make_synthetic(parse_synthetic_spec(reference));
  return load_dataset(reference);
}

}  // namespace pruneforge
