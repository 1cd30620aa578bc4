#include <cmath>
#include <random>

#include "graphreason/errors.hpp"
#include "graphreason/geometry.hpp"
#include "helpers.hpp"

using namespace graphreason;

TEST_CASE("iou") {
  const Box a{0, 0, 10, 10};
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, Box{20, 20, 30, 30}) == 0.0);
  CHECK(iou(a, Box{10, 0, 20, 10}) == 0.0);
  CHECK(iou(a, Box{5, 0, 15, 10}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("distance kernel") {
  const KernelConfig cfg{40.0};
  CHECK(distance_kernel(0, cfg) == 1.0);
  CHECK(distance_kernel(40, cfg) == doctest::Approx(0.36787944117144233).epsilon(1e-15));
  CHECK(distance_kernel(80, cfg) < distance_kernel(40, cfg));
}

TEST_CASE("spatial adjacency: single region is empty") {
  const std::vector<Box> one{{0, 0, 5, 5}};
  const auto adj = build_spatial_adjacency(one, {});
  for (const auto& w : adj.weights)
    for (double v : w) CHECK(v == 0);
}

TEST_CASE("spatial adjacency: horizontal pair") {
  const KernelConfig cfg{50.0};
  const std::vector<Box> boxes{{0, 40, 20, 60}, {30, 40, 50, 60}};
  const auto adj = build_spatial_adjacency(boxes, cfg);
  const double k = distance_kernel(30, cfg);
  CHECK(adj.at(SpatialEdge::kRightOf, 0, 1) == doctest::Approx(k).epsilon(1e-15));
  CHECK(adj.at(SpatialEdge::kLeftOf, 1, 0) == doctest::Approx(k).epsilon(1e-15));
  CHECK(adj.at(SpatialEdge::kRightOf, 1, 0) == 0);
  CHECK(adj.at(SpatialEdge::kAbove, 0, 1) == 0);
  CHECK(adj.at(SpatialEdge::kIou, 0, 1) == 0);
}

TEST_CASE("spatial adjacency invariants on random boxes") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 60);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Box> boxes;
    for (int r = 0; r < 6; ++r) {
      const double x = u(rng), y = u(rng);
      boxes.push_back({x, y, x + 1 + u(rng) / 3, y + 1 + u(rng) / 3});
    }
    if (trial % 5 == 0) boxes.push_back(boxes.front());
    const auto adj = build_spatial_adjacency(boxes, {20});
    const std::size_t n = boxes.size();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t e = 0; e < kSpatialEdgeTypes; ++e) {
          const double w = adj.weights[e][i * n + j];
          CHECK(w >= 0);
          CHECK(w <= 1);
          if (i == j) CHECK(w == 0);
        }
        CHECK(adj.at(SpatialEdge::kLeftOf, i, j) == adj.at(SpatialEdge::kRightOf, j, i));
        CHECK(adj.at(SpatialEdge::kAbove, i, j) == adj.at(SpatialEdge::kBelow, j, i));
        CHECK(adj.at(SpatialEdge::kIou, i, j) == adj.at(SpatialEdge::kIou, j, i));
      }
    }
  }
}

TEST_CASE("coincident centers are reported and treated as right-of") {
  const std::vector<Box> boxes{{0, 0, 10, 10}, {2, 2, 8, 8}};
  const auto adj = build_spatial_adjacency(boxes, {50});
  REQUIRE(adj.coincident_pairs.size() == 1);
  CHECK(adj.at(SpatialEdge::kRightOf, 0, 1) == 1.0);
  CHECK(adj.at(SpatialEdge::kLeftOf, 1, 0) == 1.0);
}

TEST_CASE("coverage weights") {
  const std::vector<Box> boxes{{0, 0, 8, 8}, {0, 0, 2, 4}, {5, 5, 6, 6}};
  const auto cov = coverage_weights(boxes, 2, 2, 8, 8);
  CHECK(cov.at(0, 0, 0) == 1.0);
  CHECK(cov.at(0, 1, 1) == 1.0);
  CHECK(cov.at(1, 0, 0) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(cov.at(1, 1, 1) == 0.0);
  CHECK(cov.at(2, 1, 1) == doctest::Approx(1.0 / 16).epsilon(1e-15));
  for (double g : cov.gamma) CHECK(g >= 0);
}

TEST_CASE("clip_box") {
  auto [inside, moved] = clip_box({1, 1, 3, 3}, 10, 10);
  CHECK_FALSE(moved);
  CHECK(inside == Box{1, 1, 3, 3});
  auto [clipped, moved2] = clip_box({-2, 5, 12, 14}, 10, 10);
  CHECK(moved2);
  CHECK(clipped == Box{0, 5, 10, 10});
}
