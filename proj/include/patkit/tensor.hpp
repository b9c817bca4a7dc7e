#pragma once

#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "patkit/common.hpp"

namespace patkit {

enum class Dtype : uint8_t { f32 = 0, f64 = 1 };

// Dense row-major tensor, up to 4 axes (batch, channel, height, width).
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(count(shape), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != count(shape)) throw DimensionError("tensor data does not match shape");
  }

  static size_t count(const std::vector<int>& s) {
    if (s.empty() || s.size() > 4) throw DimensionError("tensor rank must be 1..4");
    size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DimensionError("tensor dims must be positive");
      n *= (size_t)d;
    }
    return n;
  }

  int ndim() const { return (int)shape.size(); }
  size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  // 2D accessors (h, w)
  T& at(int r, int c) { return data[(size_t)r * shape.back() + c]; }
  const T& at(int r, int c) const { return data[(size_t)r * shape.back() + c]; }

  // Element order is preserved; only the shape header changes.
  Tensor reshaped(std::vector<int> s) const {
    if (count(s) != data.size()) throw DimensionError("reshape element count mismatch");
    return Tensor(std::move(s), data);
  }

  bool finite() const { return all_finite(data.data(), data.size()); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> r;
    r.shape = shape;
    r.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) r.data[i] = (U)data[i];
    return r;
  }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// The initial pressure image: m x m, grid spacing 1.
using Image = TensorD;

template <typename T>
constexpr Dtype dtype_of();
template <>
constexpr Dtype dtype_of<float>() { return Dtype::f32; }
template <>
constexpr Dtype dtype_of<double>() { return Dtype::f64; }

// --- file I/O ---------------------------------------------------------------
// Binary layout: "PATT", version u8 (=1), dtype u8, ndim u8, ndim x u32 LE dims,
// row-major little-endian payload.

void write_tensor(const std::string& path, const TensorF& t);
void write_tensor(const std::string& path, const TensorD& t);

struct AnyTensor {
  Dtype dtype;
  TensorF f32;
  TensorD f64;

  TensorD as_f64() const { return dtype == Dtype::f64 ? f64 : f32.cast<double>(); }
  TensorF as_f32() const { return dtype == Dtype::f32 ? f32 : f64.cast<float>(); }
};

AnyTensor read_tensor(const std::string& path);

// 8-bit binary PGM; values mapped linearly from [lo, hi]. With lo == hi the
// range is taken from the data.
void write_pgm(const std::string& path, const TensorD& img, double lo = 0, double hi = 0);

// Plain-text CSV with %.17g doubles (lossless round trip).
void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
std::string format_g17(double v);

}  // namespace patkit
