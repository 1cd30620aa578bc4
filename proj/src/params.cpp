#include "graphreason/params.hpp"

#include <cmath>

#include "graphreason/errors.hpp"

namespace graphreason {

Tensor normal_param(Shape shape, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(std::move(shape), Scalar{0}, true);
  for (auto& v : t.data()) v = static_cast<Scalar>(dist(rng));
  return t;
}

Tensor he_param(Shape shape, std::size_t fan_in, Rng& rng) {
  return normal_param(std::move(shape), std::sqrt(2.0 / static_cast<double>(fan_in ? fan_in : 1)), rng);
}

Tensor zero_param(Shape shape) { return Tensor(std::move(shape), Scalar{0}, true); }

void ParameterSet::add(std::string name, Tensor tensor) {
  if (find(name)) throw ConsistencyError("duplicate parameter name '" + name + "'");
  entries_.emplace_back(std::move(name), std::move(tensor));
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& [name, t] : entries_) out.push_back(t);
  return out;
}

const Tensor* ParameterSet::find(const std::string& name) const {
  for (const auto& [n, t] : entries_) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : entries_) n += t.size();
  return n;
}

void ParameterSet::zero_grads() const {
  for (const auto& [name, t] : entries_) {
    Tensor handle = t;
    handle.zero_grad();
  }
}

}  // namespace graphreason
