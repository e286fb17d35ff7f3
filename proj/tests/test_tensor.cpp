#include <cmath>
#include <limits>

#include "doctest.h"
#include "pruneforge/tensor.hpp"

using namespace pruneforge;

TEST_CASE("tensor stores values row-major with checked indexing") {
  Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.rank() == 2);
  CHECK(t.size() == 6);
  CHECK(t.at({0, 2}) == 3.0f);
  CHECK(t.at({1, 0}) == 4.0f);
  CHECK_THROWS_AS(t.at({2, 0}), Error);
  CHECK_THROWS_AS(t.at({0}), Error);
  CHECK_THROWS_AS(t.dim(2), Error);
}

TEST_CASE("tensor construction rejects empty extents and mismatched data") {
  CHECK_THROWS_AS(Tensor({2, 0}), Error);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), Error);
  CHECK(Tensor::full({2, 2}, 7.0f)[3] == 7.0f);
  CHECK(shape_size({2, 3, 4}) == 24);
  CHECK(shape_to_string({2, 3, 4}) == "[2,3,4]");
}

TEST_CASE("reshape keeps data and rejects size changes") {
  const Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor r = t.reshaped({3, 2});
  CHECK(r.at({2, 1}) == 6.0f);
  CHECK_THROWS_AS(t.reshaped({4, 2}), Error);
}

TEST_CASE("leading slices and gathers copy whole rows") {
  const Tensor t = Tensor::from({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor s = t.slice_leading(1, 3);
  CHECK(s.shape() == Shape{2, 2});
  CHECK(s[0] == 3.0f);
  const std::vector<std::size_t> rows{2, 0};
  const Tensor g = t.gather_leading(rows);
  CHECK(g.storage() == std::vector<float>{5, 6, 1, 2});
  CHECK_THROWS_AS(t.slice_leading(2, 2), Error);
  const std::vector<std::size_t> bad{3};
  CHECK_THROWS_AS(t.gather_leading(bad), Error);
}

TEST_CASE("finite checks and comparisons") {
  Tensor t = Tensor::from({2}, {1, 2});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  CHECK_THROWS_AS(t.require_finite("probe"), Error);

  const Tensor a = Tensor::from({2}, {1.0f, 2.0f});
  const Tensor b = Tensor::from({2}, {1.0f, 2.5f});
  CHECK(max_abs_diff(a, b) == doctest::Approx(0.5));
  CHECK(bit_equal(a, a));
  CHECK_FALSE(bit_equal(a, b));
  CHECK_THROWS_AS(max_abs_diff(a, Tensor({3})), Error);
}

TEST_CASE("bit equality distinguishes signed zeros") {
  const Tensor pos = Tensor::from({1}, {0.0f});
  const Tensor neg = Tensor::from({1}, {-0.0f});
  CHECK(pos == neg);
  CHECK_FALSE(bit_equal(pos, neg));
}

TEST_CASE("casting between precisions") {
  const Tensor t = Tensor::from({2}, {0.5f, -1.25f});
  const Tensor64 d = t.cast<double>();
  CHECK(d[1] == -1.25);
  CHECK(d.shape() == t.shape());
}
