#include "graphreason/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "graphreason/errors.hpp"

namespace graphreason {

double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double h = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (w <= 0 || h <= 0) return 0.0;
  return w * h;
}

double iou(const Box& a, const Box& b) {
  const double inter = intersection_area(a, b);
  if (inter <= 0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

double distance_kernel(double x, const KernelConfig& cfg) {
  if (!(cfg.bandwidth > 0)) throw ContractError("kernel bandwidth must be positive");
  if (x < 0) throw ContractError("distance_kernel: negative distance " + std::to_string(x));
  return std::exp(-x / cfg.bandwidth);
}

std::string_view edge_name(SpatialEdge e) {
  switch (e) {
    case SpatialEdge::kLeftOf: return "left-of";
    case SpatialEdge::kRightOf: return "right-of";
    case SpatialEdge::kAbove: return "above";
    case SpatialEdge::kBelow: return "below";
    case SpatialEdge::kIou: return "iou";
  }
  return "?";
}

SpatialAdjacency build_spatial_adjacency(std::span<const Box> regions, const KernelConfig& cfg) {
  SpatialAdjacency adj;
  const std::size_t n = regions.size();
  adj.regions = n;
  for (auto& w : adj.weights) w.assign(n * n, 0.0);

  auto set = [&](SpatialEdge e, std::size_t i, std::size_t j, double v) {
    adj.weights[static_cast<std::size_t>(e)][i * n + j] = v;
  };

  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double dx = regions[j].center_x() - regions[i].center_x();
      const double dy = regions[j].center_y() - regions[i].center_y();
      const double weight = distance_kernel(std::hypot(dx, dy), cfg);
      SpatialEdge dir;
      if (dx == 0 && dy == 0) {
        // Coincident centers: the higher index counts as lying to the right.
        dir = j > i ? SpatialEdge::kRightOf : SpatialEdge::kLeftOf;
        if (i < j) adj.coincident_pairs.emplace_back(i, j);
      } else if (std::abs(dx) >= std::abs(dy)) {
        dir = dx > 0 ? SpatialEdge::kRightOf : SpatialEdge::kLeftOf;
      } else {
        dir = dy < 0 ? SpatialEdge::kAbove : SpatialEdge::kBelow;
      }
      set(dir, i, j, weight);
      set(SpatialEdge::kIou, i, j, iou(regions[i], regions[j]));
    }
  }
  return adj;
}

CoverageWeights coverage_weights(std::span<const Box> regions, std::size_t grid_h, std::size_t grid_w,
                                 double scene_h, double scene_w) {
  if (grid_h == 0 || grid_w == 0 || !(scene_h > 0) || !(scene_w > 0)) {
    throw ContractError("coverage_weights: empty grid or scene");
  }
  CoverageWeights cov;
  cov.regions = regions.size();
  cov.grid_h = grid_h;
  cov.grid_w = grid_w;
  cov.gamma.assign(regions.size() * grid_h * grid_w, 0.0);
  const double cell_w = scene_w / static_cast<double>(grid_w);
  const double cell_h = scene_h / static_cast<double>(grid_h);
  const double cell_area = cell_w * cell_h;
  for (std::size_t r = 0; r < regions.size(); ++r) {
    const Box& b = regions[r];
    // Only cells the box can touch.
    const auto y_lo = static_cast<std::size_t>(std::clamp(std::floor(b.y1 / cell_h), 0.0, double(grid_h)));
    const auto y_hi = static_cast<std::size_t>(std::clamp(std::ceil(b.y2 / cell_h), 0.0, double(grid_h)));
    const auto x_lo = static_cast<std::size_t>(std::clamp(std::floor(b.x1 / cell_w), 0.0, double(grid_w)));
    const auto x_hi = static_cast<std::size_t>(std::clamp(std::ceil(b.x2 / cell_w), 0.0, double(grid_w)));
    for (std::size_t y = y_lo; y < y_hi; ++y) {
      for (std::size_t x = x_lo; x < x_hi; ++x) {
        const Box cell{x * cell_w, y * cell_h, (x + 1) * cell_w, (y + 1) * cell_h};
        cov.gamma[(r * grid_h + y) * grid_w + x] = std::min(1.0, intersection_area(b, cell) / cell_area);
      }
    }
  }
  return cov;
}

std::pair<Box, bool> clip_box(const Box& box, double height, double width) {
  Box c{std::clamp(box.x1, 0.0, width), std::clamp(box.y1, 0.0, height), std::clamp(box.x2, 0.0, width),
        std::clamp(box.y2, 0.0, height)};
  return {c, !(c == box)};
}

}  // namespace graphreason
