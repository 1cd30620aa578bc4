#include "graphreason/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <string>

#include "graphreason/errors.hpp"
#include "graphreason/log.hpp"

namespace graphreason::ops {

namespace {

std::atomic<bool> corruption_set{false};
std::mutex corruption_mutex;
std::string corrupted_op;
Scalar corruption_factor = 1;

Scalar adjoint_factor(std::string_view op) {
  if (!corruption_set.load(std::memory_order_relaxed)) return 1;
  std::lock_guard lock(corruption_mutex);
  return op == corrupted_op ? corruption_factor : Scalar{1};
}

bool any_requires_grad(std::initializer_list<const Tensor*> inputs) {
  if (!active_tape()) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

bool all_finite(std::span<const Scalar> v) {
  return std::all_of(v.begin(), v.end(), [](Scalar x) { return std::isfinite(x); });
}

void check_output(std::string_view op, const Tensor& out, std::initializer_list<const Tensor*> inputs) {
  if (!debug_checks()) return;
  if (all_finite(out.data())) return;
  for (const Tensor* t : inputs) {
    if (!all_finite(t->data())) return;
  }
  throw EvaluationError(std::string(op) + ": non-finite output from finite inputs");
}

// Output tensor plus the decision whether to record an adjoint.
Tensor make_output(Shape shape, std::vector<Scalar> data, bool track) {
  return Tensor(std::move(shape), std::move(data), track);
}

void record(std::string_view op, Tape::Adjoint adjoint) { active_tape()->record(op, std::move(adjoint)); }

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& a, std::size_t rank) {
  if (a.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_string(a.shape()));
  }
}

template <class Forward, class Derivative>
Tensor unary(std::string_view op, const Tensor& x, Forward f, Derivative df) {
  std::vector<Scalar> out(x.size());
  auto xs = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xs[i]);
  const bool track = any_requires_grad({&x});
  Tensor y = make_output(x.shape(), std::move(out), track);
  check_output(op, y, {&x});
  if (track) {
    record(op, [op, x, y, df]() mutable {
      if (!y.has_grad() || !x.requires_grad()) return;
      const Scalar k = adjoint_factor(op);
      auto gy = y.grad();
      auto gx = x.grad_buffer();
      auto xs = x.data();
      auto ys = y.data();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += k * gy[i] * df(xs[i], ys[i]);
    });
  }
  return y;
}

struct AxisGrid {
  double start = 0;
  double step = 0;
  std::size_t samples = 1;
  std::size_t extent = 1;  // map extent along this axis

  double coord(std::size_t k) const { return start + static_cast<double>(k) * step; }
};

AxisGrid axis_grid(double lo, double hi, std::size_t samples, std::size_t extent) {
  AxisGrid g;
  g.samples = samples;
  g.extent = extent;
  if (samples == 1 || hi - lo < 1.0) {
    g.start = 0.5 * (lo + hi) - 0.5;
    g.step = 0;
  } else {
    g.start = lo;
    g.step = (hi - lo - 1.0) / static_cast<double>(samples - 1);
  }
  return g;
}

struct Lerp {
  std::size_t i0, i1;
  Scalar t;
};

Lerp lerp_at(double u, std::size_t extent) {
  const double hi = static_cast<double>(extent - 1);
  u = std::clamp(u, 0.0, hi);
  const auto i0 = static_cast<std::size_t>(std::floor(u));
  const std::size_t i1 = std::min(i0 + 1, extent - 1);
  return {i0, i1, static_cast<Scalar>(u - static_cast<double>(i0))};
}

Box prepare_box(const Box& box, std::size_t map_h, std::size_t map_w, std::string_view op) {
  auto [clipped, moved] = clip_box(box, static_cast<double>(map_h), static_cast<double>(map_w));
  if (moved) {
    warn(std::string(op) + ": box clipped to map bounds");
  }
  if (!clipped.valid()) throw GeometryError(std::string(op) + ": degenerate box (zero area)");
  return clipped;
}

}  // namespace

Activation parse_activation(std::string_view name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "sigmoid") return Activation::kSigmoid;
  if (name == "tanh") return Activation::kTanh;
  if (name == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + std::string(name) + "'");
}

std::string_view activation_name(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

void corrupt_adjoint(std::string_view op, Scalar factor) {
  std::lock_guard lock(corruption_mutex);
  corrupted_op = std::string(op);
  corruption_factor = factor;
  corruption_set.store(true);
}

void clear_adjoint_corruption() {
  std::lock_guard lock(corruption_mutex);
  corrupted_op.clear();
  corruption_factor = 1;
  corruption_set.store(false);
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Scalar> out(m * n, Scalar{0});
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    Scalar* row = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const Scalar av = as[i * k + p];
      if (av == Scalar{0}) continue;
      const Scalar* brow = bs.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  const bool track = any_requires_grad({&a, &b});
  Tensor c = make_output({m, n}, std::move(out), track);
  check_output("matmul", c, {&a, &b});
  if (track) {
    record("matmul", [a, b, c, m, k, n]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor("matmul");
      auto gc = c.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        auto bs = b.data();
        // b transposed so each step is an axpy over a contiguous row of ga.
        std::vector<Scalar> bt(k * n);
        for (std::size_t p = 0; p < k; ++p)
          for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = bs[p * n + j];
        for (std::size_t i = 0; i < m; ++i) {
          const Scalar* gcrow = gc.data() + i * n;
          Scalar* garow = ga.data() + i * k;
          for (std::size_t j = 0; j < n; ++j) {
            const Scalar g = f * gcrow[j];
            if (g == Scalar{0}) continue;
            const Scalar* btrow = bt.data() + j * k;
            for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
          }
        }
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        auto as = a.data();
        for (std::size_t i = 0; i < m; ++i) {
          const Scalar* gcrow = gc.data() + i * n;
          for (std::size_t p = 0; p < k; ++p) {
            const Scalar av = f * as[i * k + p];
            if (av == Scalar{0}) continue;
            Scalar* gbrow = gb.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * gcrow[j];
          }
        }
      }
    });
  }
  return c;
}

namespace {

template <class Combine, class GradA, class GradB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, Combine combine, GradA da, GradB db) {
  require_same_shape(op, a, b);
  std::vector<Scalar> out(a.size());
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = combine(as[i], bs[i]);
  const bool track = any_requires_grad({&a, &b});
  Tensor c = make_output(a.shape(), std::move(out), track);
  check_output(op, c, {&a, &b});
  if (track) {
    record(op, [op, a, b, c, da, db]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor(op);
      auto gc = c.grad();
      auto as = a.data();
      auto bs = b.data();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * gc[i] * da(as[i], bs[i]);
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += f * gc[i] * db(as[i], bs[i]);
      }
    });
  }
  return c;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](Scalar x, Scalar y) { return x + y; }, [](Scalar, Scalar) { return Scalar{1}; },
      [](Scalar, Scalar) { return Scalar{1}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](Scalar x, Scalar y) { return x - y; }, [](Scalar, Scalar) { return Scalar{1}; },
      [](Scalar, Scalar) { return Scalar{-1}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](Scalar x, Scalar y) { return x * y; }, [](Scalar, Scalar y) { return y; },
      [](Scalar x, Scalar) { return x; });
}

Tensor scale(const Tensor& a, Scalar factor) {
  return unary(
      "scale", a, [factor](Scalar x) { return factor * x; }, [factor](Scalar, Scalar) { return factor; });
}

Tensor add_scalar(const Tensor& a, Scalar value) {
  return unary(
      "add_scalar", a, [value](Scalar x) { return x + value; }, [](Scalar, Scalar) { return Scalar{1}; });
}

Tensor one_minus(const Tensor& a) {
  return unary(
      "one_minus", a, [](Scalar x) { return Scalar{1} - x; }, [](Scalar, Scalar) { return Scalar{-1}; });
}

Tensor negate(const Tensor& a) {
  return unary("negate", a, [](Scalar x) { return -x; }, [](Scalar, Scalar) { return Scalar{-1}; });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (a.rank() == 0 || bias.rank() != 1 || a.shape().back() != bias.dim(0)) {
    throw DimensionError("add_bias: " + shape_string(a.shape()) + " with bias " + shape_string(bias.shape()));
  }
  const std::size_t n = bias.dim(0);
  const std::size_t rows = a.size() / n;
  std::vector<Scalar> out(a.data().begin(), a.data().end());
  auto bs = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bs[j];
  }
  const bool track = any_requires_grad({&a, &bias});
  Tensor c = make_output(a.shape(), std::move(out), track);
  check_output("add_bias", c, {&a, &bias});
  if (track) {
    record("add_bias", [a, bias, c, rows, n]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor("add_bias");
      auto gc = c.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * gc[i];
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < n; ++j) gb[j] += f * gc[r * n + j];
        }
      }
    });
  }
  return c;
}

Tensor add_n(std::span<const Tensor> terms) {
  if (terms.empty()) throw ContractError("add_n: no terms");
  Tensor acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

Tensor relu(const Tensor& x) {
  return unary(
      "relu", x, [](Scalar v) { return v > 0 ? v : Scalar{0}; },
      [](Scalar v, Scalar) { return v > 0 ? Scalar{1} : Scalar{0}; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(
      "sigmoid", x,
      [](Scalar v) {
        if (v >= 0) return Scalar{1} / (Scalar{1} + std::exp(-v));
        const Scalar e = std::exp(v);
        return e / (Scalar{1} + e);
      },
      [](Scalar, Scalar y) { return y * (Scalar{1} - y); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      "tanh", x, [](Scalar v) { return std::tanh(v); }, [](Scalar, Scalar y) { return Scalar{1} - y * y; });
}

Tensor activate(const Tensor& x, Activation kind) {
  switch (kind) {
    case Activation::kRelu: return relu(x);
    case Activation::kSigmoid: return sigmoid(x);
    case Activation::kTanh: return tanh(x);
    case Activation::kIdentity: return x;
  }
  return x;
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(a.shape()) + " as " + shape_string(shape));
  }
  const bool track = any_requires_grad({&a});
  Tensor c = make_output(std::move(shape), std::vector<Scalar>(a.data().begin(), a.data().end()), track);
  if (track) {
    record("reshape", [a, c]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar f = adjoint_factor("reshape");
      auto gc = c.grad();
      auto ga = a.grad_buffer();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += f * gc[i];
    });
  }
  return c;
}

Tensor concat_last(const Tensor& a, const Tensor& b) {
  if (a.rank() == 0 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin(), a.shape().end() - 1, b.shape().begin())) {
    throw DimensionError("concat_last: leading extents differ " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const std::size_t ka = a.shape().back(), kb = b.shape().back(), k = ka + kb;
  const std::size_t rows = ka ? a.size() / ka : (kb ? b.size() / kb : 0);
  std::vector<Scalar> out(rows * k);
  auto as = a.data();
  auto bs = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(as.data() + r * ka, ka, out.data() + r * k);
    std::copy_n(bs.data() + r * kb, kb, out.data() + r * k + ka);
  }
  Shape shape = a.shape();
  shape.back() = k;
  const bool track = any_requires_grad({&a, &b});
  Tensor c = make_output(std::move(shape), std::move(out), track);
  if (track) {
    record("concat_last", [a, b, c, rows, ka, kb, k]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor("concat_last");
      auto gc = c.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < ka; ++j) ga[r * ka + j] += f * gc[r * k + j];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < kb; ++j) gb[r * kb + j] += f * gc[r * k + ka + j];
      }
    });
  }
  return c;
}

Tensor slice_last(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() == 0 || begin > end || end > a.shape().back()) {
    throw DimensionError("slice_last: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_string(a.shape()));
  }
  const std::size_t k = a.shape().back(), w = end - begin;
  const std::size_t rows = k ? a.size() / k : 0;
  std::vector<Scalar> out(rows * w);
  auto as = a.data();
  for (std::size_t r = 0; r < rows; ++r) std::copy_n(as.data() + r * k + begin, w, out.data() + r * w);
  Shape shape = a.shape();
  shape.back() = w;
  const bool track = any_requires_grad({&a});
  Tensor c = make_output(std::move(shape), std::move(out), track);
  if (track) {
    record("slice_last", [a, c, rows, k, w, begin]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar f = adjoint_factor("slice_last");
      auto gc = c.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) ga[r * k + begin + j] += f * gc[r * w + j];
    });
  }
  return c;
}

Tensor repeat_rows(const Tensor& a, std::size_t times) {
  require_rank("repeat_rows", a, 2);
  const std::size_t rows = a.dim(0), k = a.dim(1);
  std::vector<Scalar> out(rows * times * k);
  auto as = a.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < times; ++t) std::copy_n(as.data() + r * k, k, out.data() + (r * times + t) * k);
  const bool track = any_requires_grad({&a});
  Tensor c = make_output({rows, times, k}, std::move(out), track);
  if (track) {
    record("repeat_rows", [a, c, rows, times, k]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar f = adjoint_factor("repeat_rows");
      auto gc = c.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < times; ++t)
          for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += f * gc[(r * times + t) * k + j];
    });
  }
  return c;
}

Tensor mean_middle(const Tensor& a) {
  require_rank("mean_middle", a, 3);
  const std::size_t rows = a.dim(0), m = a.dim(1), k = a.dim(2);
  if (m == 0) throw DimensionError("mean_middle: empty middle axis");
  std::vector<Scalar> out(rows * k, Scalar{0});
  auto as = a.data();
  const Scalar inv = Scalar{1} / static_cast<Scalar>(m);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t t = 0; t < m; ++t)
      for (std::size_t j = 0; j < k; ++j) out[r * k + j] += as[(r * m + t) * k + j];
  for (auto& v : out) v *= inv;
  const bool track = any_requires_grad({&a});
  Tensor c = make_output({rows, k}, std::move(out), track);
  if (track) {
    record("mean_middle", [a, c, rows, m, k, inv]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar f = adjoint_factor("mean_middle");
      auto gc = c.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t t = 0; t < m; ++t)
          for (std::size_t j = 0; j < k; ++j) ga[(r * m + t) * k + j] += f * inv * gc[r * k + j];
    });
  }
  return c;
}

Tensor column(const Tensor& a, std::size_t j) {
  require_rank("column", a, 2);
  const std::size_t rows = a.dim(0), n = a.dim(1);
  if (j >= n) throw IndexError("column " + std::to_string(j) + " out of range for " + shape_string(a.shape()));
  std::vector<Scalar> out(rows);
  for (std::size_t r = 0; r < rows; ++r) out[r] = a[r * n + j];
  const bool track = any_requires_grad({&a});
  Tensor c = make_output({rows}, std::move(out), track);
  if (track) {
    record("column", [a, c, rows, n, j]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar f = adjoint_factor("column");
      auto gc = c.grad();
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) ga[r * n + j] += f * gc[r];
    });
  }
  return c;
}

Tensor stack_columns(std::span<const Tensor> columns) {
  if (columns.empty()) throw ContractError("stack_columns: no columns");
  const std::size_t rows = columns[0].size();
  const std::size_t n = columns.size();
  std::vector<Scalar> out(rows * n);
  bool track = false;
  for (std::size_t j = 0; j < n; ++j) {
    if (columns[j].rank() != 1 || columns[j].size() != rows) {
      throw DimensionError("stack_columns: column " + std::to_string(j) + " has shape " +
                           shape_string(columns[j].shape()));
    }
    track = track || any_requires_grad({&columns[j]});
    for (std::size_t r = 0; r < rows; ++r) out[r * n + j] = columns[j][r];
  }
  Tensor c = make_output({rows, n}, std::move(out), track);
  if (track) {
    std::vector<Tensor> cols(columns.begin(), columns.end());
    record("stack_columns", [cols, c, rows, n]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor("stack_columns");
      auto gc = c.grad();
      for (std::size_t j = 0; j < n; ++j) {
        if (!cols[j].requires_grad()) continue;
        auto g = cols[j].grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) g[r] += f * gc[r * n + j];
      }
    });
  }
  return c;
}

Tensor scale_rows(const Tensor& a, const Tensor& w) {
  require_rank("scale_rows", a, 2);
  if (w.rank() != 1 || w.dim(0) != a.dim(0)) {
    throw DimensionError("scale_rows: " + shape_string(a.shape()) + " with weights " + shape_string(w.shape()));
  }
  const std::size_t rows = a.dim(0), k = a.dim(1);
  std::vector<Scalar> out(a.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] = a[r * k + j] * w[r];
  const bool track = any_requires_grad({&a, &w});
  Tensor c = make_output(a.shape(), std::move(out), track);
  check_output("scale_rows", c, {&a, &w});
  if (track) {
    record("scale_rows", [a, w, c, rows, k]() mutable {
      if (!c.has_grad()) return;
      const Scalar f = adjoint_factor("scale_rows");
      auto gc = c.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < k; ++j) ga[r * k + j] += f * gc[r * k + j] * w[r];
      }
      if (w.requires_grad()) {
        auto gw = w.grad_buffer();
        for (std::size_t r = 0; r < rows; ++r) {
          Scalar acc = 0;
          for (std::size_t j = 0; j < k; ++j) acc += gc[r * k + j] * a[r * k + j];
          gw[r] += f * acc;
        }
      }
    });
  }
  return c;
}

Tensor stop_gradient(const Tensor& a) { return a.detach(); }

Tensor sum(const Tensor& a) {
  Scalar total = 0;
  for (Scalar v : a.data()) total += v;
  const bool track = any_requires_grad({&a});
  Tensor c = make_output({}, {total}, track);
  if (track) {
    record("sum", [a, c]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar g = adjoint_factor("sum") * c.grad()[0];
      for (auto& v : a.grad_buffer()) v += g;
    });
  }
  return c;
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ContractError("mean of empty tensor");
  return scale(sum(a), Scalar{1} / static_cast<Scalar>(a.size()));
}

Tensor weighted_pick(const Tensor& a, std::span<const std::size_t> index, std::span<const Scalar> w) {
  require_rank("weighted_pick", a, 2);
  const std::size_t rows = a.dim(0), n = a.dim(1);
  if (index.size() != rows || w.size() != rows) {
    throw DimensionError("weighted_pick: " + std::to_string(rows) + " rows but " + std::to_string(index.size()) +
                         " indices and " + std::to_string(w.size()) + " weights");
  }
  Scalar total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    if (index[r] >= n) {
      throw IndexError("class index " + std::to_string(index[r]) + " out of range [0," + std::to_string(n) + ")");
    }
    total += w[r] * a[r * n + index[r]];
  }
  const bool track = any_requires_grad({&a});
  Tensor c = make_output({}, {total}, track);
  if (track) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    std::vector<Scalar> ws(w.begin(), w.end());
    record("weighted_pick", [a, c, idx, ws, n]() mutable {
      if (!c.has_grad() || !a.requires_grad()) return;
      const Scalar g = adjoint_factor("weighted_pick") * c.grad()[0];
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < idx.size(); ++r) ga[r * n + idx[r]] += g * ws[r];
    });
  }
  return c;
}

namespace {

std::pair<std::size_t, std::size_t> rows_cols(std::string_view op, const Tensor& x) {
  if (x.rank() == 1) return {1, x.dim(0)};
  if (x.rank() == 2) return {x.dim(0), x.dim(1)};
  throw DimensionError(std::string(op) + ": expected rank 1 or 2, got " + shape_string(x.shape()));
}

}  // namespace

Tensor softmax_rows(const Tensor& logits) {
  const auto [rows, n] = rows_cols("softmax_rows", logits);
  if (n == 0) throw DimensionError("softmax over zero classes");
  std::vector<Scalar> out(logits.size());
  auto xs = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* x = xs.data() + r * n;
    Scalar* y = out.data() + r * n;
    const Scalar mx = *std::max_element(x, x + n);
    Scalar total = 0;
    for (std::size_t j = 0; j < n; ++j) total += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  const bool track = any_requires_grad({&logits});
  Tensor p = make_output(logits.shape(), std::move(out), track);
  check_output("softmax_rows", p, {&logits});
  if (track) {
    record("softmax_rows", [logits, p, rows, n]() mutable {
      if (!p.has_grad() || !logits.requires_grad()) return;
      const Scalar f = adjoint_factor("softmax_rows");
      auto gp = p.grad();
      auto gx = logits.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar dot = 0;
        for (std::size_t j = 0; j < n; ++j) dot += gp[r * n + j] * p[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += f * p[r * n + j] * (gp[r * n + j] - dot);
      }
    });
  }
  return p;
}

Tensor log_softmax_rows(const Tensor& logits) {
  const auto [rows, n] = rows_cols("log_softmax_rows", logits);
  if (n == 0) throw DimensionError("log_softmax over zero classes");
  std::vector<Scalar> out(logits.size());
  auto xs = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* x = xs.data() + r * n;
    const Scalar mx = *std::max_element(x, x + n);
    Scalar total = 0;
    for (std::size_t j = 0; j < n; ++j) total += std::exp(x[j] - mx);
    const Scalar lse = mx + std::log(total);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = x[j] - lse;
  }
  const bool track = any_requires_grad({&logits});
  Tensor y = make_output(logits.shape(), std::move(out), track);
  check_output("log_softmax_rows", y, {&logits});
  if (track) {
    record("log_softmax_rows", [logits, y, rows, n]() mutable {
      if (!y.has_grad() || !logits.requires_grad()) return;
      const Scalar f = adjoint_factor("log_softmax_rows");
      auto gy = y.grad();
      auto gx = logits.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        Scalar total = 0;
        for (std::size_t j = 0; j < n; ++j) total += gy[r * n + j];
        for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += f * (gy[r * n + j] - std::exp(y[r * n + j]) * total);
      }
    });
  }
  return y;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1 || logits.size() == 0) {
    throw DimensionError("softmax_xent: expected non-empty logits vector, got " + shape_string(logits.shape()));
  }
  const std::size_t n = logits.size();
  if (target >= n) {
    throw IndexError("softmax_xent: target " + std::to_string(target) + " out of range [0," + std::to_string(n) + ")");
  }
  Tensor row = reshape(logits, {1, n});
  Tensor logp = log_softmax_rows(row);
  const std::size_t idx[] = {target};
  const Scalar w[] = {Scalar{-1}};
  return {softmax_rows(logits), weighted_pick(logp, idx, w)};
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  require_rank("conv2d input", input, 3);
  require_rank("conv2d kernel", kernel, 4);
  const std::size_t h = input.dim(0), w = input.dim(1), cin = input.dim(2);
  const std::size_t k = kernel.dim(0), cout = kernel.dim(3);
  if (kernel.dim(1) != k || k % 2 == 0) {
    throw DimensionError("conv2d: kernel must be square with odd size, got " + shape_string(kernel.shape()));
  }
  if (kernel.dim(2) != cin) {
    throw DimensionError("conv2d: input has " + std::to_string(cin) + " channels, kernel " +
                         shape_string(kernel.shape()) + " expects " + std::to_string(kernel.dim(2)));
  }
  if (bias.rank() != 1 || bias.dim(0) != cout) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " for " + std::to_string(cout) +
                         " output channels");
  }
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  std::vector<Scalar> out(h * w * cout);
  auto in = input.data();
  auto ker = kernel.data();
  auto bs = bias.data();
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Scalar* o = out.data() + (y * w + x) * cout;
      std::copy(bs.begin(), bs.end(), o);
      for (std::size_t dy = 0; dy < k; ++dy) {
        const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
        if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - pad;
          if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
          const Scalar* src = in.data() + (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
          const Scalar* kk = ker.data() + (dy * k + dx) * cin * cout;
          for (std::size_t ci = 0; ci < cin; ++ci) {
            const Scalar v = src[ci];
            const Scalar* krow = kk + ci * cout;
            for (std::size_t co = 0; co < cout; ++co) o[co] += v * krow[co];
          }
        }
      }
    }
  }
  const bool track = any_requires_grad({&input, &kernel, &bias});
  Tensor result = make_output({h, w, cout}, std::move(out), track);
  check_output("conv2d", result, {&input, &kernel, &bias});
  if (track) {
    record("conv2d", [input, kernel, bias, result, h, w, cin, cout, k, pad]() mutable {
      if (!result.has_grad()) return;
      const Scalar f = adjoint_factor("conv2d");
      auto go = result.grad();
      auto in = input.data();
      auto ker = kernel.data();
      const bool want_in = input.requires_grad();
      const bool want_k = kernel.requires_grad();
      std::span<Scalar> gin = want_in ? input.grad_buffer() : std::span<Scalar>{};
      std::span<Scalar> gk = want_k ? kernel.grad_buffer() : std::span<Scalar>{};
      if (bias.requires_grad()) {
        auto gb = bias.grad_buffer();
        for (std::size_t c = 0; c < h * w; ++c)
          for (std::size_t co = 0; co < cout; ++co) gb[co] += f * go[c * cout + co];
      }
      if (!want_in && !want_k) return;
      // Kernel transposed to [k x k x Cout x Cin] so the input gradient is
      // an axpy over contiguous channels.
      std::vector<Scalar> kt;
      if (want_in) {
        kt.resize(ker.size());
        for (std::size_t t = 0; t < k * k; ++t)
          for (std::size_t ci = 0; ci < cin; ++ci)
            for (std::size_t co = 0; co < cout; ++co)
              kt[(t * cout + co) * cin + ci] = ker[(t * cin + ci) * cout + co];
      }
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const Scalar* g = go.data() + (y * w + x) * cout;
          for (std::size_t dy = 0; dy < k; ++dy) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - pad;
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t dx = 0; dx < k; ++dx) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - pad;
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
              const std::size_t src_off = (static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)) * cin;
              const std::size_t k_off = (dy * k + dx) * cin * cout;
              if (want_in) {
                Scalar* gi = gin.data() + src_off;
                for (std::size_t co = 0; co < cout; ++co) {
                  const Scalar v = f * g[co];
                  const Scalar* ktrow = kt.data() + k_off + co * cin;
                  for (std::size_t ci = 0; ci < cin; ++ci) gi[ci] += v * ktrow[ci];
                }
              }
              if (want_k) {
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const Scalar v = f * in[src_off + ci];
                  Scalar* gkrow = gk.data() + k_off + ci * cout;
                  for (std::size_t co = 0; co < cout; ++co) gkrow[co] += v * g[co];
                }
              }
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor crop_and_resize(const Tensor& map, const Box& box, std::size_t out_h, std::size_t out_w) {
  const Box boxes[] = {box};
  Tensor batched = crop_and_resize(map, std::span<const Box>(boxes), out_h, out_w);
  return reshape(batched, {out_h, out_w, map.dim(2)});
}

Tensor crop_and_resize(const Tensor& map, std::span<const Box> boxes, std::size_t out_h, std::size_t out_w) {
  require_rank("crop_and_resize", map, 3);
  if (out_h == 0 || out_w == 0) throw ContractError("crop_and_resize: output size must be at least 1x1");
  const std::size_t h = map.dim(0), w = map.dim(1), d = map.dim(2);
  const std::size_t n = boxes.size();

  struct Grid {
    AxisGrid ys, xs;
  };
  std::vector<Grid> grids;
  grids.reserve(n);
  for (const Box& raw : boxes) {
    const Box b = prepare_box(raw, h, w, "crop_and_resize");
    grids.push_back({axis_grid(b.y1, b.y2, out_h, h), axis_grid(b.x1, b.x2, out_w, w)});
  }

  std::vector<Scalar> out(n * out_h * out_w * d, Scalar{0});
  auto src = map.data();
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const Lerp ly = lerp_at(grids[r].ys.coord(oy), h);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const Lerp lx = lerp_at(grids[r].xs.coord(ox), w);
        Scalar* o = out.data() + ((r * out_h + oy) * out_w + ox) * d;
        const Scalar w00 = (1 - ly.t) * (1 - lx.t), w01 = (1 - ly.t) * lx.t;
        const Scalar w10 = ly.t * (1 - lx.t), w11 = ly.t * lx.t;
        const Scalar* p00 = src.data() + (ly.i0 * w + lx.i0) * d;
        const Scalar* p01 = src.data() + (ly.i0 * w + lx.i1) * d;
        const Scalar* p10 = src.data() + (ly.i1 * w + lx.i0) * d;
        const Scalar* p11 = src.data() + (ly.i1 * w + lx.i1) * d;
        for (std::size_t c = 0; c < d; ++c) o[c] = w00 * p00[c] + w01 * p01[c] + w10 * p10[c] + w11 * p11[c];
      }
    }
  }
  const bool track = any_requires_grad({&map});
  Tensor result = make_output({n, out_h, out_w, d}, std::move(out), track);
  check_output("crop_and_resize", result, {&map});
  if (track) {
    record("crop_and_resize", [map, result, grids, n, out_h, out_w, h, w, d]() mutable {
      if (!result.has_grad() || !map.requires_grad()) return;
      const Scalar f = adjoint_factor("crop_and_resize");
      auto go = result.grad();
      auto gm = map.grad_buffer();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const Lerp ly = lerp_at(grids[r].ys.coord(oy), h);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const Lerp lx = lerp_at(grids[r].xs.coord(ox), w);
            const Scalar* g = go.data() + ((r * out_h + oy) * out_w + ox) * d;
            const Scalar w00 = f * (1 - ly.t) * (1 - lx.t), w01 = f * (1 - ly.t) * lx.t;
            const Scalar w10 = f * ly.t * (1 - lx.t), w11 = f * ly.t * lx.t;
            Scalar* p00 = gm.data() + (ly.i0 * w + lx.i0) * d;
            Scalar* p01 = gm.data() + (ly.i0 * w + lx.i1) * d;
            Scalar* p10 = gm.data() + (ly.i1 * w + lx.i0) * d;
            Scalar* p11 = gm.data() + (ly.i1 * w + lx.i1) * d;
            for (std::size_t c = 0; c < d; ++c) {
              p00[c] += w00 * g[c];
              p01[c] += w01 * g[c];
              p10[c] += w10 * g[c];
              p11[c] += w11 * g[c];
            }
          }
        }
      }
    });
  }
  return result;
}

Tensor paste_back(const Tensor& memory, std::span<const Box> boxes, const Tensor& patches,
                  const CoverageWeights& coverage) {
  require_rank("paste_back memory", memory, 3);
  require_rank("paste_back patches", patches, 4);
  const std::size_t h = memory.dim(0), w = memory.dim(1), d = memory.dim(2);
  const std::size_t n = patches.dim(0), ph = patches.dim(1), pw = patches.dim(2);
  if (patches.dim(3) != d) {
    throw DimensionError("paste_back: patch depth " + std::to_string(patches.dim(3)) + " vs memory depth " +
                         std::to_string(d));
  }
  if (boxes.size() != n || coverage.regions != n) {
    throw ConsistencyError("paste_back: " + std::to_string(n) + " patches, " + std::to_string(boxes.size()) +
                           " boxes, coverage for " + std::to_string(coverage.regions) + " regions");
  }
  if (coverage.grid_h != h || coverage.grid_w != w) {
    throw ConsistencyError("paste_back: coverage grid does not match memory " + shape_string(memory.shape()));
  }

  // Inverse sample grids: memory cell -> patch coordinate.
  struct Inverse {
    AxisGrid ys, xs;
  };
  std::vector<Inverse> grids;
  grids.reserve(n);
  for (const Box& raw : boxes) {
    const Box b = prepare_box(raw, h, w, "paste_back");
    grids.push_back({axis_grid(b.y1, b.y2, ph, h), axis_grid(b.x1, b.x2, pw, w)});
  }
  auto patch_coord = [](const AxisGrid& g, std::size_t cell) {
    if (g.step == 0) return 0.5 * static_cast<double>(g.samples - 1);
    return (static_cast<double>(cell) - g.start) / g.step;
  };

  std::vector<Scalar> total(h * w, Scalar{0});
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < h * w; ++c) total[c] += static_cast<Scalar>(coverage.gamma[r * h * w + c]);
  std::vector<Scalar> keep(h * w), inv_denom(h * w);
  for (std::size_t c = 0; c < h * w; ++c) {
    keep[c] = Scalar{1} - std::min(Scalar{1}, total[c]);
    inv_denom[c] = Scalar{1} / std::max(Scalar{1}, total[c]);
  }

  auto old = memory.data();
  auto pd = patches.data();
  std::vector<Scalar> out(h * w * d);
  for (std::size_t c = 0; c < h * w; ++c)
    for (std::size_t k = 0; k < d; ++k) out[c * d + k] = keep[c] * old[c * d + k];
  for (std::size_t r = 0; r < n; ++r) {
    const Scalar* patch = pd.data() + r * ph * pw * d;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const Scalar g = static_cast<Scalar>(coverage.gamma[(r * h + y) * w + x]);
        if (g == Scalar{0}) continue;
        const Lerp ly = lerp_at(patch_coord(grids[r].ys, y), ph);
        const Lerp lx = lerp_at(patch_coord(grids[r].xs, x), pw);
        const Scalar w00 = g * (1 - ly.t) * (1 - lx.t), w01 = g * (1 - ly.t) * lx.t;
        const Scalar w10 = g * ly.t * (1 - lx.t), w11 = g * ly.t * lx.t;
        const Scalar* p00 = patch + (ly.i0 * pw + lx.i0) * d;
        const Scalar* p01 = patch + (ly.i0 * pw + lx.i1) * d;
        const Scalar* p10 = patch + (ly.i1 * pw + lx.i0) * d;
        const Scalar* p11 = patch + (ly.i1 * pw + lx.i1) * d;
        Scalar* o = out.data() + (y * w + x) * d;
        for (std::size_t k = 0; k < d; ++k) o[k] += w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
      }
    }
  }
  for (std::size_t c = 0; c < h * w; ++c)
    for (std::size_t k = 0; k < d; ++k) out[c * d + k] *= inv_denom[c];

  const bool track = any_requires_grad({&memory, &patches});
  Tensor result = make_output({h, w, d}, std::move(out), track);
  check_output("paste_back", result, {&memory, &patches});
  if (track) {
    record("paste_back", [memory, patches, result, grids, coverage, keep, inv_denom, patch_coord, n, h, w, d, ph,
                          pw]() mutable {
      if (!result.has_grad()) return;
      const Scalar f = adjoint_factor("paste_back");
      auto go = result.grad();
      if (memory.requires_grad()) {
        auto gm = memory.grad_buffer();
        for (std::size_t c = 0; c < h * w; ++c) {
          const Scalar s = f * keep[c] * inv_denom[c];
          for (std::size_t k = 0; k < d; ++k) gm[c * d + k] += s * go[c * d + k];
        }
      }
      if (!patches.requires_grad()) return;
      auto gp = patches.grad_buffer();
      for (std::size_t r = 0; r < n; ++r) {
        Scalar* patch = gp.data() + r * ph * pw * d;
        for (std::size_t y = 0; y < h; ++y) {
          for (std::size_t x = 0; x < w; ++x) {
            const Scalar g = static_cast<Scalar>(coverage.gamma[(r * h + y) * w + x]);
            if (g == Scalar{0}) continue;
            const Scalar s = f * g * inv_denom[y * w + x];
            const Lerp ly = lerp_at(patch_coord(grids[r].ys, y), ph);
            const Lerp lx = lerp_at(patch_coord(grids[r].xs, x), pw);
            const Scalar w00 = s * (1 - ly.t) * (1 - lx.t), w01 = s * (1 - ly.t) * lx.t;
            const Scalar w10 = s * ly.t * (1 - lx.t), w11 = s * ly.t * lx.t;
            const Scalar* gcell = go.data() + (y * w + x) * d;
            Scalar* p00 = patch + (ly.i0 * pw + lx.i0) * d;
            Scalar* p01 = patch + (ly.i0 * pw + lx.i1) * d;
            Scalar* p10 = patch + (ly.i1 * pw + lx.i0) * d;
            Scalar* p11 = patch + (ly.i1 * pw + lx.i1) * d;
            for (std::size_t k = 0; k < d; ++k) {
              p00[k] += w00 * gcell[k];
              p01[k] += w01 * gcell[k];
              p10[k] += w10 * gcell[k];
              p11[k] += w11 * gcell[k];
            }
          }
        }
      }
    });
  }
  return result;
}

}  // namespace graphreason::ops
