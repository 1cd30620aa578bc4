#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "graphreason/geometry.hpp"
#include "graphreason/tensor.hpp"

namespace graphreason {

// A scene: a feature grid tiling height x width pixels and labeled boxes.
struct Scene {
  std::string id;
  Tensor features;  // [H x W x Dh]
  std::vector<Box> boxes;  // pixels
  std::vector<std::size_t> labels;
  double height = 0;
  double width = 0;

  std::size_t grid_h() const { return features.dim(0); }
  std::size_t grid_w() const { return features.dim(1); }
  std::size_t feature_dim() const { return features.dim(2); }
  std::size_t regions() const { return boxes.size(); }

  // Boxes in feature-grid cell units.
  std::vector<Box> boxes_in_cells() const;
  // Same scene restricted to the listed region indices, in that order.
  Scene subset(std::span<const std::size_t> keep) const;
};

}  // namespace graphreason
