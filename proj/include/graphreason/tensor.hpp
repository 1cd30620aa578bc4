#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace graphreason {

#ifdef GRAPHREASON_FLOAT32
using Scalar = float;
#else
using Scalar = double;
#endif

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

struct TensorStorage {
  Shape shape;
  std::vector<Scalar> data;
  std::vector<Scalar> grad;  // empty until something accumulates into it
  bool requires_grad = false;
};

// Dense row-major array of Scalars. Copies share storage, the same way a
// framework tensor handle does; use clone() for an independent copy.
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, Scalar fill = 0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad = false);

  static Tensor scalar(Scalar value);
  static Tensor from(std::initializer_list<Scalar> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<Scalar>> rows);

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return storage_->data.size(); }

  std::span<Scalar> data() { return storage_->data; }
  std::span<const Scalar> data() const { return storage_->data; }
  Scalar& operator[](std::size_t i) { return storage_->data[i]; }
  Scalar operator[](std::size_t i) const { return storage_->data[i]; }
  Scalar item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const Scalar> grad() const { return storage_->grad; }
  // Allocates a zero gradient on first use.
  std::span<Scalar> grad_buffer() const;
  // Gradient values, zeros when nothing has accumulated.
  std::vector<Scalar> grad_or_zero() const;
  void zero_grad();
  void clear_grad() { storage_->grad.clear(); }

  // Independent copy of the values; never requires grad.
  Tensor detach() const;
  Tensor clone() const;

  bool is_same(const Tensor& other) const { return storage_ == other.storage_; }
  const std::shared_ptr<TensorStorage>& storage() const { return storage_; }

 private:
  std::shared_ptr<TensorStorage> storage_;
};

// Ordered record of differentiable operations. Entries are appended in
// forward order, so replaying adjoints in reverse is a valid topological
// traversal. A tape supports exactly one backward pass; reset() rearms it.
class Tape {
 public:
  using Adjoint = std::function<void()>;

  void record(std::string_view op, Adjoint adjoint);
  void backward(const Tensor& root);
  void reset();

  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  std::vector<std::string_view> op_names() const;

 private:
  struct Entry {
    std::string_view op;
    Adjoint adjoint;
  };
  std::vector<Entry> entries_;
  bool consumed_ = false;
};

// Makes a tape the recording target for the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

// Suspends recording for the current thread (inference, finite differences).
class NoGradScope {
 public:
  NoGradScope();
  ~NoGradScope();
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

// Backward on the active tape.
void backward(const Tensor& root);

// Finite-value checking of op outputs. Defaults to on in debug builds.
void set_debug_checks(bool enabled);
bool debug_checks();

}  // namespace graphreason
