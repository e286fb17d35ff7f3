#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "pruneforge/relevance.hpp"

using namespace pruneforge;

namespace {

std::vector<KernelScore> scores_of(std::vector<double> values, Criterion c = Criterion::objective_loss_delta) {
  std::vector<KernelScore> out;
  for (std::size_t k = 0; k < values.size(); ++k) out.push_back({2, k, values[k], c});
  return out;
}

LabeledBatch small_batch() {
  SyntheticConfig cfg;
  cfg.samples_per_class = 6;
  cfg.channels = 1;
  cfg.seed = 3;
  return make_synthetic(cfg).all();
}

}  // namespace

TEST_CASE("fixed-fraction selection removes the least relevant, lower index first on ties") {
  const KernelSet s = select(scores_of({0.3, 0.1, 0.1, 0.5, 0.1, 0.2}), SelectionPolicy::fixed(0.5));
  CHECK(s.layer == 2);
  CHECK(s.kernels == std::vector<std::size_t>{1, 2, 4});
  // floor(0.5 * 5) = 2
  CHECK(select(scores_of({5, 4, 3, 2, 1}), SelectionPolicy::fixed(0.5)).kernels == std::vector<std::size_t>{3, 4});
}

TEST_CASE("APoZ is a lower-is-more-relevant criterion") {
  CHECK(relevance_direction(Criterion::apoz) == -1);
  CHECK(relevance_direction(Criterion::l1_norm) == 1);
  // High fractions of zeros are removed first.
  const KernelSet s = select(scores_of({0.9, 0.1, 0.5, 0.95}, Criterion::apoz), SelectionPolicy::fixed(0.5));
  CHECK(s.kernels == std::vector<std::size_t>{0, 3});
}

TEST_CASE("threshold and explicit selection") {
  const auto scores = scores_of({0.3, -0.1, 0.0, 0.5});
  CHECK(select(scores, SelectionPolicy::below(0.0)).kernels == std::vector<std::size_t>{1});
  CHECK(select(scores, SelectionPolicy::below(-1.0)).empty());
  CHECK(select(scores, SelectionPolicy::exactly({3, 0})).kernels == std::vector<std::size_t>{0, 3});
  CHECK_THROWS_AS(select(scores, SelectionPolicy::exactly({4})), Error);
  CHECK_THROWS_AS(select(scores, SelectionPolicy::below(1.0)), Error);
  CHECK_THROWS_AS(select(scores, SelectionPolicy::fixed(1.0)), Error);
  CHECK_THROWS_AS(select({}, SelectionPolicy::fixed(0.5)), Error);
}

TEST_CASE("selection policies and criteria round-trip through JSON and names") {
  for (const SelectionPolicy& p :
       {SelectionPolicy::fixed(0.25), SelectionPolicy::below(0.1), SelectionPolicy::exactly({1, 2})}) {
    const nlohmann::json j = p;
    const SelectionPolicy back = j.get<SelectionPolicy>();
    CHECK(back.mode == p.mode);
    CHECK(back.fraction == p.fraction);
    CHECK(back.kernels == p.kernels);
  }
  CHECK(criterion_from_string("l1") == Criterion::l1_norm);
  CHECK(criterion_from_string(to_string(Criterion::apoz)) == Criterion::apoz);
  CHECK_THROWS_AS(criterion_from_string("taylor"), Error);
}

TEST_CASE("L1 scores sum absolute kernel weights without the bias") {
  ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  for (std::size_t i = 0; i < 9; ++i) m.conv[0].kernels[i] = (i % 2 ? -1.0f : 1.0f) * static_cast<float>(i);
  m.conv[0].bias[0] = 100.0f;
  const auto scores = score_l1(m, 1);
  REQUIRE(scores.size() == 8);
  CHECK(scores[0].value == doctest::Approx(36.0));
  CHECK(scores[0].criterion == Criterion::l1_norm);
}

TEST_CASE("APoZ counts exactly-zero post-ReLU outputs") {
  ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 1);
  m.conv[1].bias[2] = -1e6f;  // always off
  m.conv[1].bias[5] = 1e6f;   // always on
  const auto scores = score_apoz(m, 2, small_batch());
  CHECK(scores[2].value == 1.0);
  CHECK(scores[5].value == 0.0);
  CHECK(scores[0].value >= 0.0);
  CHECK(scores[0].value <= 1.0);
}

TEST_CASE("objective scores equal brute-force loss deltas of structural removal") {
  const auto r = oracle::objective_score_oracle(5, 10);
  CHECK(r.kernels == 48);
  CHECK(r.worst_difference <= 1e-6);
}

TEST_CASE("a dead kernel has zero objective score") {
  ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 2);
  m.conv[2].bias[4] = -1e6f;
  const auto scores = score_objective(m, 3, small_batch());
  CHECK(scores[4].value == 0.0);
}

TEST_CASE("scoring validates its inputs") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 2);
  CHECK_THROWS_AS(score_objective(m, 5, small_batch()), Error);
  CHECK_THROWS_AS(score_l1(m, 0), Error);
  CHECK_THROWS_AS(score_objective(m, 1, LabeledBatch{}), Error);
  CHECK(score_layer(Criterion::l1_norm, m, 2, small_batch()).size() == 8);
}

TEST_CASE("mean cross-entropy of an untrained model is near log(classes)") {
  const ModelState m = build_preset("tinyvgg", {1, 16, 16}, 3, 2);
  CHECK(std::abs(mean_cross_entropy(m, small_batch()) - std::log(3.0)) < 0.5);
}
