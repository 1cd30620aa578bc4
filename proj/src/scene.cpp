#include "graphreason/scene.hpp"

#include "graphreason/errors.hpp"

namespace graphreason {

std::vector<Box> Scene::boxes_in_cells() const {
  const double sx = static_cast<double>(grid_w()) / width;
  const double sy = static_cast<double>(grid_h()) / height;
  std::vector<Box> out;
  out.reserve(boxes.size());
  for (const auto& b : boxes) out.push_back(b.scaled(sx, sy));
  return out;
}

Scene Scene::subset(std::span<const std::size_t> keep) const {
  Scene out;
  out.id = id;
  out.features = features;
  out.height = height;
  out.width = width;
  for (auto i : keep) {
    if (i >= boxes.size()) throw IndexError("region index " + std::to_string(i) + " out of range");
    out.boxes.push_back(boxes[i]);
    if (i < labels.size()) out.labels.push_back(labels[i]);
  }
  return out;
}

}  // namespace graphreason
