#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace graphreason {

// Axis-aligned rectangle in continuous pixel (or cell) coordinates.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  Box scaled(double sx, double sy) const { return {x1 * sx, y1 * sy, x2 * sx, y2 * sy}; }

  friend bool operator==(const Box&, const Box&) = default;
};

// Overlap area of two boxes; zero when disjoint.
double intersection_area(const Box& a, const Box& b);
double iou(const Box& a, const Box& b);

struct KernelConfig {
  double bandwidth = 50.0;  // pixels
};

// exp(-x / bandwidth); x must be non-negative.
double distance_kernel(double x, const KernelConfig& cfg);

enum class SpatialEdge : std::size_t { kLeftOf = 0, kRightOf, kAbove, kBelow, kIou };
inline constexpr std::size_t kSpatialEdgeTypes = 5;
std::string_view edge_name(SpatialEdge e);

// Region-to-region adjacency, one dense R x R matrix per edge type.
// A[i][j] is the weight with which region i receives from region j:
// right-of[i][j] > 0 when j lies to the right of i; above[i][j] > 0 when j
// lies above i (smaller y).
struct SpatialAdjacency {
  std::size_t regions = 0;
  std::array<std::vector<double>, kSpatialEdgeTypes> weights;
  // Ordered pairs (i < j) whose centers coincide; j is treated as right of i.
  std::vector<std::pair<std::size_t, std::size_t>> coincident_pairs;

  double at(SpatialEdge e, std::size_t i, std::size_t j) const {
    return weights[static_cast<std::size_t>(e)][i * regions + j];
  }
};

SpatialAdjacency build_spatial_adjacency(std::span<const Box> regions, const KernelConfig& cfg);

// gamma[r][c]: fraction of memory cell c (row-major over an H x W grid)
// lying inside region r.
struct CoverageWeights {
  std::size_t regions = 0;
  std::size_t grid_h = 0, grid_w = 0;
  std::vector<double> gamma;

  double at(std::size_t r, std::size_t y, std::size_t x) const {
    return gamma[(r * grid_h + y) * grid_w + x];
  }
};

// Cells tile a scene of scene_h x scene_w pixels uniformly.
CoverageWeights coverage_weights(std::span<const Box> regions, std::size_t grid_h, std::size_t grid_w,
                                 double scene_h, double scene_w);

// Clips a box to [0, width] x [0, height]; reports whether it moved.
std::pair<Box, bool> clip_box(const Box& box, double height, double width);

}  // namespace graphreason
