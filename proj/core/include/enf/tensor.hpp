#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace enf {

enum class DType : std::uint8_t { F32 = 0, F64 = 1 };

const char* dtype_name(DType dtype);

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major array of reals.
///
/// Storage is always double; a tensor tagged F32 holds only values that are
/// exactly representable as float (every constructor and op result is
/// rounded through float). This keeps one code path for both precisions while
/// preserving 32-bit arithmetic semantics and bit-exact f32 serialization.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, DType dtype = DType::F64);
  Tensor(Shape shape, std::vector<double> data, DType dtype = DType::F64);

  static Tensor zeros(Shape shape, DType dtype = DType::F64);
  static Tensor full(Shape shape, double value, DType dtype = DType::F64);
  static Tensor scalar(double value, DType dtype = DType::F64);
  /// 2-D tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows,
                          DType dtype = DType::F64);
  static Tensor identity(std::size_t n, DType dtype = DType::F64);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return data_.size(); }
  DType dtype() const { return dtype_; }

  /// Leading extent of a 2-D tensor.
  std::size_t rows() const;
  /// Trailing extent of a 2-D tensor.
  std::size_t cols() const;

  std::span<const double> data() const { return data_; }
  std::span<double> mutable_data() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double operator[](std::size_t i) const { return data_[i]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.back() + c]; }
  /// Value of a single-element tensor.
  double item() const;

  Tensor reshaped(Shape shape) const;
  Tensor as_dtype(DType dtype) const;

  bool all_finite() const;
  bool operator==(const Tensor& other) const;

 private:
  void round_to_dtype();

  Shape shape_;
  std::vector<double> data_;
  DType dtype_ = DType::F64;
};

/// Rounds `x` to the nearest value representable in `dtype`.
inline double round_to(double x, DType dtype) {
  return dtype == DType::F32 ? static_cast<double>(static_cast<float>(x)) : x;
}

}  // namespace enf
