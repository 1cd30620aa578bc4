#include "graphreason/gradcheck.hpp"
#include "graphreason/gradcheck_suite.hpp"
#include "graphreason/ops.hpp"
#include "helpers.hpp"

using namespace graphreason;
using namespace graphreason::testing;

namespace {

struct Problem {
  Tensor w, x;
  std::function<Tensor()> f;
};

Problem sigmoid_problem(std::uint64_t seed) {
  Rng rng(seed);
  Problem p{random_tensor({4, 3}, rng, 1.0, true), random_tensor({3, 2}, rng, 1.0, true), {}};
  p.f = [w = p.w, x = p.x] { return ops::sum(ops::sigmoid(ops::matmul(w, x))); };
  return p;
}

}  // namespace

TEST_CASE("sum(sigmoid(W x)) passes the finite-difference check") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Problem p = sigmoid_problem(seed);
    std::vector<Tensor> params{p.w, p.x};
    const GradCheckReport rep = finite_diff_check(p.f, params);
    CHECK(rep.passed);
    CHECK(rep.max_relative_error < 1e-4);
    CHECK(rep.checked == 18);
  }
}

TEST_CASE("a doubled adjoint fails the check") {
  Problem p = sigmoid_problem(11);
  std::vector<Tensor> params{p.w, p.x};
  ops::corrupt_adjoint("sigmoid", 2);
  const GradCheckReport rep = finite_diff_check(p.f, params);
  ops::clear_adjoint_corruption();
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_relative_error > 0.1);
}

TEST_CASE("a parameterless graph passes vacuously") {
  std::vector<Tensor> none;
  const GradCheckReport rep = finite_diff_check([] { return ops::sum(Tensor::from({1, 2})); }, none);
  CHECK(rep.passed);
  CHECK(rep.checked == 0);
}

TEST_CASE("ReLU kinks are counted and excluded") {
  Tensor x = Tensor::from({1e-7, 0.5, -0.25}).set_requires_grad(true);
  std::vector<Tensor> params{x};
  const GradCheckReport rep = finite_diff_check([x] { return ops::sum(ops::relu(x)); }, params);
  CHECK(rep.passed);
  CHECK(rep.nonsmooth == 1);
  CHECK(rep.checked == 2);
}

TEST_CASE("smooth curvature is not mistaken for a kink") {
  Tensor x = Tensor::from({1e-4, 2e-5}).set_requires_grad(true);
  std::vector<Tensor> params{x};
  const GradCheckReport rep = finite_diff_check([x] { return ops::sum(ops::mul(x, x)); }, params);
  CHECK(rep.passed);
  CHECK(rep.nonsmooth == 0);
}

TEST_CASE("coordinate sampling limits the checked count") {
  Rng rng(3);
  Tensor w = random_tensor({10, 10}, rng, 1.0, true);
  std::vector<Tensor> params{w};
  GradCheckOptions opts;
  opts.max_coords_per_param = 7;
  const GradCheckReport rep = finite_diff_check([w] { return ops::sum(ops::tanh(w)); }, params, opts);
  CHECK(rep.checked + rep.nonsmooth == 7);
}

TEST_CASE("suite reports one line per case and catches corruption") {
  SuiteOptions opts;
  opts.seeds = 2;
  opts.only = {"matmul", "conv2d", "gru_step"};
  auto entries = run_gradcheck_suite(opts);
  REQUIRE(entries.size() == 3);
  for (const auto& e : entries) {
    CHECK(e.passed());
    CHECK(format_suite_entry(e).rfind("PASS  " + e.name, 0) == 0);
  }
  opts.corrupt_op = "conv2d";
  entries = run_gradcheck_suite(opts);
  CHECK(entries[0].passed());
  CHECK_FALSE(entries[1].passed());
  CHECK(format_suite_entry(entries[1]).rfind("FAIL", 0) == 0);
  const auto names = gradcheck_case_names();
  CHECK(std::find(names.begin(), names.end(), "total_loss") != names.end());
}
