#pragma once

#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "graphreason/params.hpp"
#include "graphreason/tensor.hpp"

namespace graphreason::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  Tensor t = normal_param(std::move(shape), stddev, rng);
  t.set_requires_grad(requires_grad);
  return t;
}

// Owning copy; safe to iterate when the tensor is a temporary.
inline std::vector<Scalar> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline void check_close(const Tensor& a, const Tensor& b, double tol = 1e-12) {
  REQUIRE(a.shape() == b.shape());
  for (std::size_t i = 0; i < a.size(); ++i) {
    INFO("index " << i);
    CHECK(std::abs(a[i] - b[i]) <= tol);
  }
}

inline void check_values(const Tensor& a, std::initializer_list<double> values, double tol = 1e-12) {
  REQUIRE(a.size() == values.size());
  std::size_t i = 0;
  for (double v : values) {
    INFO("index " << i);
    CHECK(std::abs(a[i++] - v) <= tol);
  }
}

}  // namespace graphreason::testing
