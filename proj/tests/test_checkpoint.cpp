#include <cstring>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "pruneforge/checkpoint.hpp"
#include "pruneforge/io.hpp"

using namespace pruneforge;
namespace fs = std::filesystem;

namespace {

bool same_model(const ModelState& a, const ModelState& b) {
  if (!(a.spec == b.spec) || a.conv.size() != b.conv.size() || a.classifier.size() != b.classifier.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.conv.size(); ++i) {
    if (!bit_equal(a.conv[i].kernels, b.conv[i].kernels) || !bit_equal(a.conv[i].bias, b.conv[i].bias)) return false;
  }
  for (std::size_t i = 0; i < a.classifier.size(); ++i) {
    if (!bit_equal(a.classifier[i].weights, b.classifier[i].weights) ||
        !bit_equal(a.classifier[i].bias, b.classifier[i].bias)) {
      return false;
    }
  }
  return true;
}

fs::path scratch(const char* name) {
  const fs::path dir = fs::temp_directory_path() / "pruneforge-test-checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("checkpoints round-trip bit-exactly") {
  const ModelState m = build_preset("tinyvgg", {3, 16, 16}, 5, 11);
  const std::string bytes = encode_checkpoint(m);
  CHECK(same_model(decode_checkpoint(bytes), m));
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
}

TEST_CASE("pruned architectures round-trip") {
  const ModelState m = prune_layer(build_preset("tinyvgg", {1, 16, 16}, 3, 2), KernelSet::make(4, {0, 5}));
  const fs::path path = scratch("pruned.ckpt");
  save_checkpoint(m, path);
  CHECK(same_model(load_checkpoint(path), m));
  CHECK_FALSE(fs::exists(path.string() + ".tmp"));
}

TEST_CASE("the header starts with the magic and a little-endian version") {
  const std::string bytes = encode_checkpoint(build_preset("tinyvgg", {1, 16, 16}, 3, 2));
  REQUIRE(bytes.size() > 16);
  CHECK(bytes.substr(0, 4) == "CNNP");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 0);
  CHECK(bytes[7] == 0);
}

TEST_CASE("corrupted checkpoints are rejected with a diagnostic") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 2);
  const std::string good = encode_checkpoint(m);

  SUBCASE("bad magic") {
    std::string bad = good;
    bad[0] = 'X';
    CHECK_THROWS_WITH_AS(decode_checkpoint(bad), "checkpoint: bad magic bytes", Error);
  }
  SUBCASE("unsupported version") {
    std::string bad = good;
    bad[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  }
  SUBCASE("truncation anywhere") {
    for (std::size_t cut : {std::size_t{3}, std::size_t{10}, good.size() / 2, good.size() - 1}) {
      CHECK_THROWS_AS(decode_checkpoint(good.substr(0, cut)), Error);
    }
  }
  SUBCASE("trailing bytes") { CHECK_THROWS_AS(decode_checkpoint(good + "x"), Error); }
  SUBCASE("non-finite weights") {
    std::string bad = good;
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(bad.data() + bad.size() - 4, &nan, 4);
    CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  }
  SUBCASE("malformed architecture JSON") {
    std::string bad = good;
    bad[16] = '#';
    CHECK_THROWS_AS(decode_checkpoint(bad), Error);
  }
}

TEST_CASE("missing files raise errors") {
  CHECK_THROWS_AS(load_checkpoint(scratch("does-not-exist.ckpt")), Error);
}

TEST_CASE("byte reader reports truncation") {
  io::ByteWriter w;
  w.u32(0x01020304u);
  w.u64(7);
  w.f32(1.5f);
  const std::string bytes = w.take();
  CHECK(bytes.size() == 16);
  CHECK(static_cast<unsigned char>(bytes[0]) == 0x04);
  io::ByteReader r(bytes, "probe");
  CHECK(r.u32() == 0x01020304u);
  CHECK(r.u64() == 7);
  CHECK(r.f32() == 1.5f);
  CHECK_THROWS_AS(r.u8(), Error);
}
