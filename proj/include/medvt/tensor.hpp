#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace medvt {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

inline const char* dtype_name(Dtype dt) { return dt == Dtype::f32 ? "f32" : "f64"; }
inline size_t dtype_size(Dtype dt) { return dt == Dtype::f32 ? 4 : 8; }

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Dense N-d array, row-major, immutable by convention: public ops never
// mutate their inputs. Mutating accessors exist for construction only.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, Dtype dt);

  static Tensor zeros(Shape shape, Dtype dt = Dtype::f64);
  static Tensor full(Shape shape, double value, Dtype dt = Dtype::f64);
  static Tensor scalar(double value, Dtype dt = Dtype::f64);  // shape {1}
  static Tensor from(Shape shape, const std::vector<double>& values, Dtype dt = Dtype::f64);

  bool defined() const { return numel_ > 0; }
  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t numel() const { return numel_; }
  Dtype dtype() const { return dtype_; }

  template <class T>
  T* data() {
    return std::get<std::vector<T>>(buf_).data();
  }
  template <class T>
  const T* data() const {
    return std::get<std::vector<T>>(buf_).data();
  }

  // dtype-erased scalar access; converts through double.
  double get(int64_t i) const;
  void set(int64_t i, double v);
  double item() const;  // numel()==1

  Tensor astype(Dtype dt) const;
  Tensor clone() const { return *this; }

  bool all_finite() const;
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  // Bytewise equality (same dtype, shape, bits). Used by determinism tests.
  bool bits_equal(const Tensor& o) const;

 private:
  Shape shape_;
  int64_t numel_ = 0;
  Dtype dtype_ = Dtype::f64;
  std::variant<std::vector<float>, std::vector<double>> buf_ = std::vector<double>{};
};

// Runs f with a value of the active scalar type, e.g.
//   dispatch(t.dtype(), [&](auto tag) { using T = decltype(tag); ... });
template <class F>
decltype(auto) dispatch(Dtype dt, F&& f) {
  if (dt == Dtype::f32) return f(float{});
  return f(double{});
}

void check(bool cond, const std::string& msg);

}  // namespace medvt
