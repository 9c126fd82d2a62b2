#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fmtx/rng.hpp"

namespace fmtx {

using Shape = std::vector<long>;

inline long numel(const Shape& s) {
  long n = 1;
  for (long d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << "]";
  return os.str();
}

[[noreturn]] inline void shape_error(const std::string& op, const Shape& a,
                                     const Shape& b) {
  throw std::invalid_argument(op + ": shape mismatch " + shape_str(a) +
                              " vs " + shape_str(b));
}

// Dense row-major tensor. Copies are shallow (storage is shared); the only
// writers after construction are initializers and the optimizer.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(static_cast<size_t>(numel(shape_)), fill)) {
    for (long d : shape_)
      if (d <= 0) throw std::invalid_argument("Tensor: nonpositive dim " + shape_str(shape_));
    set_requires_grad(requires_grad);
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : shape_(std::move(shape)),
        data_(std::make_shared<std::vector<T>>(std::move(values))) {
    if (numel(shape_) != static_cast<long>(data_->size()))
      throw std::invalid_argument("Tensor: " + std::to_string(data_->size()) +
                                  " values for shape " + shape_str(shape_));
    set_requires_grad(requires_grad);
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1),
                      bool requires_grad = false) {
    Tensor t(std::move(shape), T(0), requires_grad);
    for (auto& v : t.values()) v = static_cast<T>(rng.normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return shape_; }
  long size() const { return data_ ? static_cast<long>(data_->size()) : 0; }
  long rows() const { return shape_.size() == 2 ? shape_[0] : (shape_.size() == 1 ? 1 : -1); }
  long cols() const { return shape_.size() == 2 ? shape_[1] : (shape_.size() == 1 ? shape_[0] : -1); }
  bool defined() const { return static_cast<bool>(data_); }

  std::vector<T>& values() { return *data_; }
  const std::vector<T>& values() const { return *data_; }
  T* ptr() { return data_->data(); }
  const T* ptr() const { return data_->data(); }
  T item() const {
    if (size() != 1) throw std::invalid_argument("item(): tensor has " + std::to_string(size()) + " elements");
    return (*data_)[0];
  }

  bool requires_grad() const { return requires_grad_; }

  // The grad buffer is allocated the moment the flag is raised so that every
  // handle copied afterwards shares it; a lazily allocated buffer would not
  // propagate back through shallow copies.
  void set_requires_grad(bool rg) {
    requires_grad_ = rg;
    if (rg && !grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
  }

  bool has_grad() const { return static_cast<bool>(grad_); }
  std::vector<T>& grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    return *grad_;
  }
  const std::vector<T>& grad() const { return *grad_; }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }
  void drop_grad() { grad_.reset(); }

  // Identity of the underlying storage; used as the key in gradient maps.
  const void* id() const { return data_.get(); }

  // Same storage viewed under a different shape (row-major, same length).
  Tensor reshaped(Shape shape) const {
    if (numel(shape) != size()) shape_error("reshape", shape_, shape);
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  bool all_finite() const {
    for (const T& v : *data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

 private:
  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  bool requires_grad_ = false;
  std::shared_ptr<std::vector<T>> grad_;
};

}  // namespace fmtx
