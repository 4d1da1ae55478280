#include "clipfit/tensor.hpp"

#include <sstream>

#include "clipfit/errors.hpp"

namespace clipfit {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) {
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data.assign(shape_numel(impl_->shape), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("tensor data has " + std::to_string(data.size()) +
                         " elements but shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)));
  }
  impl_ = std::make_shared<Impl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::row(std::vector<double> v) {
  Shape s{v.size()};
  return Tensor(std::move(s), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
  return Tensor(Shape{rows, cols}, std::move(v));
}

void Tensor::require_defined() const {
  if (!impl_) throw DimensionError("use of undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined();
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t i) const {
  const Shape& s = shape();
  if (i >= s.size()) {
    throw DimensionError("dim " + std::to_string(i) + " out of range for " +
                         shape_str(s));
  }
  return s[i];
}

std::size_t Tensor::numel() const {
  require_defined();
  return impl_->data.size();
}

double* Tensor::data() {
  require_defined();
  return impl_->data.data();
}

const double* Tensor::data() const {
  require_defined();
  return impl_->data.data();
}

std::vector<double>& Tensor::vec() {
  require_defined();
  return impl_->data;
}

const std::vector<double>& Tensor::vec() const {
  require_defined();
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DimensionError("item() on tensor of shape " + shape_str(shape()));
  }
  return impl_->data[0];
}

double Tensor::at(std::size_t i) const {
  if (i >= numel()) {
    throw IndexError("flat index " + std::to_string(i) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->data[i];
}

double Tensor::at(std::size_t r, std::size_t c) const {
  if (ndim() != 2) throw DimensionError("at(r,c) on " + shape_str(shape()));
  if (r >= dim(0) || c >= dim(1)) {
    throw IndexError("index (" + std::to_string(r) + "," + std::to_string(c) +
                     ") out of range for " + shape_str(shape()));
  }
  return impl_->data[r * dim(1) + c];
}

bool Tensor::requires_grad() const {
  require_defined();
  return impl_->requires_grad;
}

void Tensor::set_requires_grad(bool v) {
  require_defined();
  impl_->requires_grad = v;
}

bool Tensor::has_grad() const {
  require_defined();
  return !impl_->grad.empty();
}

double* Tensor::grad_data() {
  require_defined();
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

const std::vector<double>& Tensor::grad() const {
  require_defined();
  if (impl_->grad.empty()) {
    throw DimensionError("grad() on tensor without gradient buffer");
  }
  return impl_->grad;
}

void Tensor::zero_grad() {
  require_defined();
  impl_->grad.clear();
}

void Tensor::accumulate_grad(const double* g, std::size_t n) {
  require_defined();
  if (n != impl_->data.size()) {
    throw DimensionError("gradient of size " + std::to_string(n) +
                         " accumulated into tensor of shape " +
                         shape_str(impl_->shape));
  }
  double* dst = grad_data();
  for (std::size_t i = 0; i < n; ++i) dst[i] += g[i];
}

Tensor Tensor::clone() const {
  require_defined();
  Tensor out(impl_->shape, impl_->data);
  out.impl_->requires_grad = impl_->requires_grad;
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got " +
                         shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;  // nothing recorded can reach it
  const double one = 1.0;
  Tensor seed = loss;  // shallow copy, same storage
  seed.accumulate_grad(&one, 1);
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
}

}  // namespace clipfit
