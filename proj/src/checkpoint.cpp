#include "pruneforge/checkpoint.hpp"

#include <utility>
#include <vector>

#include "pruneforge/io.hpp"

namespace pruneforge {
namespace {

constexpr std::string_view kMagic = "CNNP";
constexpr std::uint8_t kFloat32 = 1;

std::vector<std::pair<std::string, const Tensor*>> named_tensors(const ModelState& model) {
  std::vector<std::pair<std::string, const Tensor*>> out;
  for (std::size_t i = 0; i < model.conv.size(); ++i) {
    const auto base = "conv" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", &model.conv[i].kernels);
    out.emplace_back(base + ".bias", &model.conv[i].bias);
  }
  for (std::size_t i = 0; i < model.classifier.size(); ++i) {
    const auto base = "fc" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", &model.classifier[i].weights);
    out.emplace_back(base + ".bias", &model.classifier[i].bias);
  }
  return out;
}

std::vector<std::pair<std::string, Shape>> expected_records(const ArchitectureSpec& spec) {
  std::vector<std::pair<std::string, Shape>> out;
  for (std::size_t i = 0; i < spec.conv_layers.size(); ++i) {
    const auto& c = spec.conv_layers[i];
    const auto base = "conv" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", Shape{c.out_channels, c.in_channels, c.kernel_extent, c.kernel_extent});
    out.emplace_back(base + ".bias", Shape{c.out_channels});
  }
  std::size_t in = spec.flattened_size();
  auto sizes = spec.classifier.hidden_sizes;
  sizes.push_back(spec.classifier.class_count);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    const auto base = "fc" + std::to_string(i + 1);
    out.emplace_back(base + ".weight", Shape{sizes[i], in});
    out.emplace_back(base + ".bias", Shape{sizes[i]});
    in = sizes[i];
  }
  return out;
}

}  // namespace

std::string encode_checkpoint(const ModelState& model) {
  model.validate();
  io::ByteWriter w;
  w.raw(kMagic);
  w.u32(kCheckpointVersion);
  const std::string spec_text = nlohmann::json(model.spec).dump();
  w.u64(spec_text.size());
  w.raw(spec_text);
  const auto tensors = named_tensors(model);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, tensor] : tensors) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.raw(name);
    w.u32(static_cast<std::uint32_t>(tensor->rank()));
    for (auto e : tensor->shape()) w.u64(e);
    w.u8(kFloat32);
    for (float v : tensor->values()) w.f32(v);
  }
  return w.take();
}

ModelState decode_checkpoint(const std::string& bytes) {
  io::ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != kMagic) throw Error("checkpoint: bad magic bytes");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                std::to_string(kCheckpointVersion) + ")");
  }
  const auto spec_len = r.u64();
  if (spec_len > r.remaining()) throw Error("checkpoint: truncated architecture block");
  ModelState model;
  try {
    model.spec = nlohmann::json::parse(r.raw(spec_len)).get<ArchitectureSpec>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("checkpoint: malformed architecture: ") + e.what());
  }
  model.spec.validate();
  const auto expected = expected_records(model.spec);
  const auto count = r.u32();
  if (count != expected.size()) {
    throw Error("checkpoint: " + std::to_string(count) + " tensor records, architecture needs " +
                std::to_string(expected.size()));
  }
  std::vector<Tensor> tensors;
  for (const auto& [want_name, want_shape] : expected) {
    const std::string name(r.raw(r.u32()));
    if (name != want_name) throw Error("checkpoint: expected record " + want_name + ", found " + name);
    Shape shape(r.u32());
    for (auto& e : shape) e = r.u64();
    if (shape != want_shape) {
      throw Error("checkpoint: record " + name + " has shape " + shape_to_string(shape) +
                  " but architecture requires " + shape_to_string(want_shape));
    }
    if (r.u8() != kFloat32) throw Error("checkpoint: record " + name + " has unknown dtype");
    const std::size_t n = shape_size(shape);
    if (r.remaining() < 4 * n) throw Error("checkpoint: truncated data for " + name);
    std::vector<float> values(n);
    for (auto& v : values) v = r.f32();
    tensors.emplace_back(std::move(shape), std::move(values));
  }
  if (r.remaining() != 0) throw Error("checkpoint: trailing bytes after last record");

  std::size_t next = 0;
  for (std::size_t i = 0; i < model.spec.conv_layers.size(); ++i) {
    ConvParams p{std::move(tensors[next]), std::move(tensors[next + 1])};
    next += 2;
    model.conv.push_back(std::move(p));
  }
  while (next < tensors.size()) {
    DenseParams p{std::move(tensors[next]), std::move(tensors[next + 1])};
    next += 2;
    model.classifier.push_back(std::move(p));
  }
  model.validate();
  return model;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  io::write_file_atomic(path, encode_checkpoint(model));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace pruneforge
