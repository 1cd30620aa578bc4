#include "graphreason/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "graphreason/errors.hpp"

namespace graphreason {

namespace {

thread_local Tape* current_tape = nullptr;

#ifdef NDEBUG
bool finite_checks = false;
#else
bool finite_checks = true;
#endif

}  // namespace

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

Tensor::Tensor() : Tensor(Shape{}, Scalar{0}) {}

Tensor::Tensor(Shape shape, Scalar fill, bool requires_grad)
    : storage_(std::make_shared<TensorStorage>()) {
  storage_->data.assign(shape_size(shape), fill);
  storage_->shape = std::move(shape);
  storage_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<Scalar> data, bool requires_grad)
    : storage_(std::make_shared<TensorStorage>()) {
  if (shape_size(shape) != data.size()) {
    throw DimensionError("tensor shape " + shape_string(shape) + " does not match " +
                         std::to_string(data.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->data = std::move(data);
  storage_->requires_grad = requires_grad;
}

Tensor Tensor::scalar(Scalar value) { return Tensor(Shape{}, std::vector<Scalar>{value}); }

Tensor Tensor::from(std::initializer_list<Scalar> values) {
  return Tensor(Shape{values.size()}, std::vector<Scalar>(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<Scalar>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows ? rows.begin()->size() : 0;
  std::vector<Scalar> data;
  data.reserve(n_rows * n_cols);
  for (const auto& row : rows) {
    if (row.size() != n_cols) throw DimensionError("ragged matrix literal");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor(Shape{n_rows, n_cols}, std::move(data));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                         shape_string(shape()));
  }
  return storage_->shape[axis];
}

Scalar Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return storage_->data[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
  return *this;
}

std::span<Scalar> Tensor::grad_buffer() const {
  if (storage_->grad.empty()) storage_->grad.assign(size(), Scalar{0});
  return storage_->grad;
}

std::vector<Scalar> Tensor::grad_or_zero() const {
  if (storage_->grad.empty()) return std::vector<Scalar>(size(), Scalar{0});
  return storage_->grad;
}

void Tensor::zero_grad() { storage_->grad.assign(size(), Scalar{0}); }

Tensor Tensor::detach() const { return Tensor(shape(), storage_->data); }

Tensor Tensor::clone() const {
  Tensor copy(shape(), storage_->data, requires_grad());
  return copy;
}

void Tape::record(std::string_view op, Adjoint adjoint) {
  if (consumed_) throw ContractError("tape already consumed by backward; reset() before reuse");
  entries_.push_back(Entry{op, std::move(adjoint)});
}

void Tape::backward(const Tensor& root) {
  if (root.size() != 1) {
    throw ContractError("backward root must be a scalar, got " + shape_string(root.shape()));
  }
  if (consumed_) throw ContractError("backward called twice on the same tape");
  consumed_ = true;
  if (!root.requires_grad()) return;
  Tensor seed = root;
  seed.grad_buffer()[0] += Scalar{1};
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->adjoint();
}

void Tape::reset() {
  entries_.clear();
  consumed_ = false;
}

std::vector<std::string_view> Tape::op_names() const {
  std::vector<std::string_view> names;
  names.reserve(entries_.size());
  for (const auto& e : entries_) names.push_back(e.op);
  return names;
}

TapeScope::TapeScope(Tape& tape) : previous_(current_tape) { current_tape = &tape; }
TapeScope::~TapeScope() { current_tape = previous_; }

NoGradScope::NoGradScope() : previous_(current_tape) { current_tape = nullptr; }
NoGradScope::~NoGradScope() { current_tape = previous_; }

Tape* active_tape() { return current_tape; }

void backward(const Tensor& root) {
  if (!current_tape) throw ContractError("backward without an active tape");
  current_tape->backward(root);
}

void set_debug_checks(bool enabled) { finite_checks = enabled; }
bool debug_checks() { return finite_checks; }

}  // namespace graphreason
