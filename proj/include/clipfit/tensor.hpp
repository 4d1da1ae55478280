#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace clipfit {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

// Dense row-major tensor of 64-bit floats. Copies are shallow (shared
// storage), clone() is deep. The gradient buffer is allocated lazily on the
// first accumulation, so has_grad() doubles as "a backward pass touched this
// tensor since the last zero_grad()".
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor(Shape{1}, v); }
  static Tensor row(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t i) const;
  std::size_t numel() const;

  double* data();
  const double* data() const;
  std::vector<double>& vec();
  const std::vector<double>& vec() const;
  double item() const;  // value of a single-element tensor
  double at(std::size_t i) const;
  double at(std::size_t r, std::size_t c) const;

  bool requires_grad() const;
  void set_requires_grad(bool v);
  bool has_grad() const;
  // Grad buffer, zero-allocated on first use.
  double* grad_data();
  const std::vector<double>& grad() const;  // throws if no buffer present
  void zero_grad();                         // drops the buffer entirely
  void accumulate_grad(const double* g, std::size_t n);

  Tensor clone() const;  // deep copy of values; no grad; same requires_grad
  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
  };

  void require_defined() const;

  std::shared_ptr<Impl> impl_;
};

// Reverse-mode tape. Operations append exactly one node in execution order,
// which is a topological order by construction; backward() seeds d(loss)=1
// and walks the list once in reverse, accumulating into every tensor that
// requires gradients. Nodes hold shared handles to their operands, so tensors
// stay alive until clear().
class Tape {
 public:
  void record(std::function<void()> backward_fn) {
    nodes_.push_back(std::move(backward_fn));
  }

  // loss must be a defined scalar. If loss does not require gradients the
  // call is a no-op (nothing on the tape can reach it).
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  std::vector<std::function<void()>> nodes_;
};

}  // namespace clipfit
