#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "graphreason/tensor.hpp"

namespace graphreason {

using Rng = std::mt19937_64;

// Trainable tensor with N(0, stddev^2) entries.
Tensor normal_param(Shape shape, double stddev, Rng& rng);
// He initialization for a layer with the given fan-in.
Tensor he_param(Shape shape, std::size_t fan_in, Rng& rng);
Tensor zero_param(Shape shape);

// Named, ordered view of every trainable tensor of a model.
class ParameterSet {
 public:
  void add(std::string name, Tensor tensor);
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  const Tensor* find(const std::string& name) const;
  std::size_t scalar_count() const;
  void zero_grads() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

}  // namespace graphreason
