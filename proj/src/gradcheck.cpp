#include "graphreason/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <vector>

#include "graphreason/errors.hpp"

namespace graphreason {

namespace {

Scalar evaluate(const std::function<Tensor()>& f) {
  NoGradScope no_grad;
  const Scalar v = f().item();
  if (!std::isfinite(v)) throw EvaluationError("finite_diff_check: objective is not finite");
  return v;
}

}  // namespace

GradCheckReport finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                                  const GradCheckOptions& options) {
  GradCheckReport report;
  if (params.empty()) return report;

  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor root = f();
    if (!std::isfinite(root.item())) throw EvaluationError("finite_diff_check: objective is not finite");
    tape.backward(root);
  }

  std::mt19937_64 rng(options.sample_seed);
  const Scalar eps = options.eps;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& p = params[pi];
    const std::vector<Scalar> analytic = p.grad_or_zero();
    std::vector<std::size_t> coords(p.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_param && coords.size() > options.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const Scalar original = p[i];
      p[i] = original + eps;
      const Scalar up = evaluate(f);
      p[i] = original - eps;
      const Scalar down = evaluate(f);
      p[i] = original;
      const Scalar mid = evaluate(f);

      Scalar numeric = (up - down) / (2 * eps);
      const Scalar forward = (up - mid) / eps;
      const Scalar backward_diff = (mid - down) / eps;
      // Rounding noise of the difference quotients.
      Scalar noise = 8 * std::numeric_limits<Scalar>::epsilon() * (std::abs(up) + std::abs(mid) + std::abs(down)) / eps;
      const Scalar scale = std::max({std::abs(forward), std::abs(backward_diff), options.denominator_floor});
      const Scalar jump = std::abs(forward - backward_diff);
      if (jump > 0.5 * options.tolerance * scale && jump > 10 * noise) {
        // Curvature makes the one-sided slopes differ by O(eps) and the gap
        // halves with the step; a kink within eps / 2 keeps it.
        const Scalar half = eps / 2;
        p[i] = original + half;
        const Scalar up_half = evaluate(f);
        p[i] = original - half;
        const Scalar down_half = evaluate(f);
        p[i] = original;
        const Scalar jump_half = std::abs((up_half - mid) / half - (mid - down_half) / half);
        if (jump_half > 0.75 * jump) {
          ++report.nonsmooth;
          continue;
        }
        numeric = (up_half - down_half) / (2 * half);
        noise *= 2;
      }
      const Scalar floor = std::max(options.denominator_floor, 1e5 * noise);
      const Scalar denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
      const Scalar rel = std::abs(analytic[i] - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error || report.worst.empty()) {
        report.max_relative_error = std::max(report.max_relative_error, rel);
        std::ostringstream msg;
        msg.precision(10);
        msg << "param" << pi << '[' << i << "]: analytic " << analytic[i] << " vs numeric " << numeric;
        report.worst = msg.str();
      }
    }
  }
  report.passed = report.max_relative_error < options.tolerance && (report.checked > 0 || report.nonsmooth == 0);
  return report;
}

}  // namespace graphreason
