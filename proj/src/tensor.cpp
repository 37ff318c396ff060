#include "medvt/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace medvt {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ",";
    os << s[i];
  }
  os << "]";
  return os.str();
}

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t e : s) n *= e;
  return n;
}

void check(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

Tensor::Tensor(Shape shape, Dtype dt) : shape_(std::move(shape)), dtype_(dt) {
  for (int64_t e : shape_) check(e > 0, "tensor extents must be positive, got " + shape_str(shape_));
  check(!shape_.empty(), "rank-0 tensors are not supported; use shape {1}");
  numel_ = shape_numel(shape_);
  if (dt == Dtype::f32)
    buf_ = std::vector<float>(static_cast<size_t>(numel_), 0.0f);
  else
    buf_ = std::vector<double>(static_cast<size_t>(numel_), 0.0);
}

Tensor Tensor::zeros(Shape shape, Dtype dt) { return Tensor(std::move(shape), dt); }

Tensor Tensor::full(Shape shape, double value, Dtype dt) {
  Tensor t(std::move(shape), dt);
  dispatch(dt, [&](auto tag) {
    using T = decltype(tag);
    T* p = t.data<T>();
    for (int64_t i = 0; i < t.numel(); ++i) p[i] = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::scalar(double value, Dtype dt) { return full({1}, value, dt); }

Tensor Tensor::from(Shape shape, const std::vector<double>& values, Dtype dt) {
  Tensor t(std::move(shape), dt);
  check(static_cast<int64_t>(values.size()) == t.numel(),
        "value count " + std::to_string(values.size()) + " does not match shape " + shape_str(t.shape()));
  for (int64_t i = 0; i < t.numel(); ++i) t.set(i, values[static_cast<size_t>(i)]);
  return t;
}

double Tensor::get(int64_t i) const {
  return dispatch(dtype_, [&](auto tag) -> double {
    using T = decltype(tag);
    return static_cast<double>(data<T>()[i]);
  });
}

void Tensor::set(int64_t i, double v) {
  dispatch(dtype_, [&](auto tag) {
    using T = decltype(tag);
    data<T>()[i] = static_cast<T>(v);
  });
}

double Tensor::item() const {
  check(numel_ == 1, "item() requires a single-element tensor, got " + shape_str(shape_));
  return get(0);
}

Tensor Tensor::astype(Dtype dt) const {
  if (dt == dtype_) return *this;
  Tensor out(shape_, dt);
  for (int64_t i = 0; i < numel_; ++i) out.set(i, get(i));
  return out;
}

bool Tensor::all_finite() const {
  return dispatch(dtype_, [&](auto tag) -> bool {
    using T = decltype(tag);
    const T* p = data<T>();
    for (int64_t i = 0; i < numel_; ++i)
      if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
  });
}

bool Tensor::bits_equal(const Tensor& o) const {
  if (dtype_ != o.dtype_ || shape_ != o.shape_) return false;
  return dispatch(dtype_, [&](auto tag) -> bool {
    using T = decltype(tag);
    return std::memcmp(data<T>(), o.data<T>(), sizeof(T) * static_cast<size_t>(numel_)) == 0;
  });
}

}  // namespace medvt
