#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace pruneforge::io {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file, then renames it over `path`, so a
/// reader never observes a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian append/read helpers for binary formats.
class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void raw(std::string_view bytes) { out_.append(bytes); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class ByteReader {
 public:
  ByteReader(std::string_view bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  std::string_view raw(std::size_t count);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t count);

  std::string_view bytes_;
  std::size_t pos_ = 0;
  std::string context_;
};

}  // namespace pruneforge::io
