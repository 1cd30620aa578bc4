#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "graphreason/tensor.hpp"

namespace graphreason {

struct GradCheckOptions {
  Scalar eps = 1e-5;
  Scalar tolerance = 1e-4;
  // Relative error uses max(|analytic|, |numeric|, floor) as denominator.
  Scalar denominator_floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t sample_seed = 0;
};

struct GradCheckReport {
  Scalar max_relative_error = 0;
  std::size_t checked = 0;
  // Coordinates whose one-sided slopes disagree by a gap that does not
  // shrink with the step, i.e. a ReLU or clamp kink lies within eps / 2.
  // The derivative is undefined there, so they are excluded from the error
  // statistic and counted instead.
  std::size_t nonsmooth = 0;
  std::string worst;  // "param[index]: analytic vs numeric"
  bool passed = true;
};

// f must be deterministic and return a scalar. It is called once under a
// fresh tape for the analytic gradient and then repeatedly without
// recording while each parameter coordinate is perturbed in place.
GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  const GradCheckOptions& options = {});

}  // namespace graphreason
