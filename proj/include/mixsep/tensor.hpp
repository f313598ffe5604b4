#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "mixsep/errors.hpp"

namespace mixsep::diffmath {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
  std::vector<std::size_t> st(s.size(), 1);
  for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
  return st;
}

// Dense row-major array with an optional gradient buffer of the same shape.
// Rank 0 (empty shape) is a scalar holding one element.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() : data_(1, T(0)) {}

  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)), data_(checked_numel(shape_), fill) {}

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != checked_numel(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }

  static BasicTensor of(Shape shape, std::initializer_list<T> vals) {
    return BasicTensor(std::move(shape), std::vector<T>(vals));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t numel() const { return data_.size(); }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }
  T& operator[](std::size_t flat) { return data_[flat]; }
  const T& operator[](std::size_t flat) const { return data_[flat]; }

  T at(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) throw ShapeError("index rank mismatch for " + shape_str(shape_));
    auto st = row_major_strides(shape_);
    std::size_t flat = 0, a = 0;
    for (std::size_t i : idx) flat += i * st[a++];
    return data_[flat];
  }

  bool requires_grad() const { return requires_grad_; }
  BasicTensor& set_requires_grad(bool v) {
    requires_grad_ = v;
    return *this;
  }

  bool has_grad() const { return !grad_.empty(); }

  std::vector<T>& grad() {
    if (grad_.empty()) grad_.assign(data_.size(), T(0));
    return grad_;
  }
  const std::vector<T>& grad() const {
    if (grad_.size() != data_.size()) throw ShapeError("gradient not populated");
    return grad_;
  }

  void zero_grad() { grad_.assign(data_.size(), T(0)); }
  void drop_grad() { grad_.clear(); }

  void accumulate_grad(const std::vector<T>& g) {
    if (g.size() != data_.size()) throw ShapeError("gradient shape mismatch");
    auto& mine = grad();
    for (std::size_t i = 0; i < g.size(); ++i) mine[i] += g[i];
  }

 private:
  static std::size_t checked_numel(const Shape& s) {
    for (std::size_t d : s) {
      if (d == 0) throw ShapeError("zero extent in shape " + shape_str(s));
    }
    return shape_numel(s);
  }

  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool requires_grad_ = false;
};

using Tensor = BasicTensor<float>;

template <typename To, typename From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> d(t.numel());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<To>(t.data()[i]);
  return BasicTensor<To>(t.shape(), std::move(d));
}

}  // namespace mixsep::diffmath
