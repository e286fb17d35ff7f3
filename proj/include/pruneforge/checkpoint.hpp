#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "pruneforge/model.hpp"

namespace pruneforge {

/// Binary checkpoint layout (all integers little-endian):
///
///   "CNNP"                         4 bytes magic
///   u32 version                    currently 1
///   u64 length, bytes              architecture as JSON text
///   u32 record count
///   per record:
///     u32 name length, bytes       e.g. "conv1.weight"
///     u32 rank
///     u64 extents[rank]
///     u8  dtype code               1 = float32
///     raw values                   product(extents) little-endian float32
///
/// Records appear in layer order: conv{i}.weight, conv{i}.bias, then
/// fc{i}.weight, fc{i}.bias.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const ModelState& model);
ModelState decode_checkpoint(const std::string& bytes);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace pruneforge
