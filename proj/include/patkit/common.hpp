#pragma once

#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>
#include <functional>

namespace patkit {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& w) : std::runtime_error("config error: " + w) {}
};
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& w) : std::runtime_error("format error: " + w) {}
};
struct SizeError : std::runtime_error {
  explicit SizeError(const std::string& w) : std::runtime_error("size error: " + w) {}
};
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& w) : std::runtime_error("dimension error: " + w) {}
};
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& w) : std::runtime_error("numeric error: " + w) {}
};
struct ConvergenceError : std::runtime_error {
  explicit ConvergenceError(const std::string& w) : std::runtime_error("convergence error: " + w) {}
};
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& w) : std::runtime_error("divergence error: " + w) {}
};
struct GeometryError : std::runtime_error {
  explicit GeometryError(const std::string& w) : std::runtime_error("geometry error: " + w) {}
};
struct IoError : std::runtime_error {
  explicit IoError(const std::string& w) : std::runtime_error("io error: " + w) {}
};

// Bit-pattern finiteness checks; immune to -ffast-math style assumptions.
inline bool finite_bits(float x) {
  uint32_t u;
  std::memcpy(&u, &x, 4);
  return ((u >> 23) & 0xFFu) != 0xFFu;
}
inline bool finite_bits(double x) {
  uint64_t u;
  std::memcpy(&u, &x, 8);
  return ((u >> 52) & 0x7FFull) != 0x7FFull;
}

template <typename T>
inline bool all_finite(const T* p, size_t n) {
  for (size_t i = 0; i < n; ++i)
    if (!finite_bits(p[i])) return false;
  return true;
}

// Runs fn(i) for i in [0, n). Work items must write disjoint state; results do
// not depend on the thread count.
inline void parallel_for(size_t n, const std::function<void(size_t)>& fn) {
  unsigned hw = std::thread::hardware_concurrency();
  if (hw <= 1 || n < 2) {
    for (size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  unsigned nthreads = hw < 8 ? hw : 8;
  if ((size_t)nthreads > n) nthreads = (unsigned)n;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < nthreads; ++t) {
    pool.emplace_back([&, t]() {
      for (size_t i = t; i < n; i += nthreads) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const uint8_t* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}
inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

}  // namespace patkit
