#pragma once

#include <cmath>
#include <cstdint>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "agediff/error.hpp"
#include "agediff/rng.hpp"

namespace agediff {

using Shape = std::vector<int>;

inline int64_t shape_numel(const Shape& shape) {
  if (shape.empty()) throw ShapeError("empty shape");
  int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive dimension " + std::to_string(d));
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "{";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "}";
  return os.str();
}

template <class S>
struct TensorDataT {
  Shape shape;
  std::vector<S> values;
  bool requires_grad = false;
  std::vector<S> grad;  // empty until backward deposits into it
  bool tracked = false; // participates in the active tape
};

// Dense row-major tensor with optional gradient. Value-semantic handle:
// copies share the underlying storage.
template <class S>
class TensorT {
 public:
  TensorT() = default;

  static TensorT zeros(Shape shape) {
    TensorT t;
    t.d_ = std::make_shared<TensorDataT<S>>();
    t.d_->values.assign(static_cast<size_t>(shape_numel(shape)), S(0));
    t.d_->shape = std::move(shape);
    return t;
  }

  static TensorT full(Shape shape, S v) {
    TensorT t = zeros(std::move(shape));
    for (S& x : t.d_->values) x = v;
    t.check_finite("full");
    return t;
  }

  static TensorT scalar(S v) { return full({1}, v); }

  static TensorT from_values(Shape shape, std::vector<S> values) {
    if (static_cast<int64_t>(values.size()) != shape_numel(shape))
      throw ShapeError("from_values: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    TensorT t;
    t.d_ = std::make_shared<TensorDataT<S>>();
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    t.check_finite("from_values");
    return t;
  }

  static TensorT randn(Shape shape, Rng& rng, double stddev = 1.0) {
    TensorT t = zeros(std::move(shape));
    for (S& x : t.d_->values) x = static_cast<S>(rng.normal() * stddev);
    return t;
  }

  bool defined() const { return static_cast<bool>(d_); }
  const Shape& shape() const { return data().shape; }
  int dim(size_t i) const { return data().shape.at(i); }
  int64_t numel() const { return static_cast<int64_t>(data().values.size()); }
  bool is_scalar() const { return numel() == 1; }

  const std::vector<S>& values() const { return data().values; }
  std::vector<S>& mutable_values() { return data().values; }
  S at(size_t i) const { return data().values.at(i); }
  S item() const {
    if (!is_scalar()) throw ShapeError("item() on non-scalar " + shape_str(shape()));
    return data().values[0];
  }

  bool requires_grad() const { return data().requires_grad; }
  TensorT& set_requires_grad(bool v) {
    data().requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !data().grad.empty(); }
  const std::vector<S>& grad() const {
    if (!has_grad()) throw Error("grad absent; run backward first");
    return data().grad;
  }
  void clear_grad() { data().grad.clear(); }

  bool tracked() const { return data().tracked; }

  // Same shape, same storage object.
  bool same_storage(const TensorT& other) const { return d_ == other.d_; }

  std::shared_ptr<TensorDataT<S>> handle() const { return d_; }
  static TensorT wrap(std::shared_ptr<TensorDataT<S>> d) {
    TensorT t;
    t.d_ = std::move(d);
    return t;
  }

  void check_finite(const char* what) const {
    for (S x : data().values)
      if (!std::isfinite(static_cast<double>(x)))
        throw NonFiniteError(std::string(what) + " produced NaN/Inf");
  }

 private:
  TensorDataT<S>& data() const {
    if (!d_) throw Error("undefined tensor");
    return *d_;
  }
  std::shared_ptr<TensorDataT<S>> d_;
};

using Tensor = TensorT<float>;

}  // namespace agediff
