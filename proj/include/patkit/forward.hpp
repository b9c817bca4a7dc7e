#pragma once

#include <string>
#include <utility>
#include <vector>

#include "patkit/rng.hpp"
#include "patkit/tensor.hpp"

namespace patkit {

enum class DetectorLayout { top_line, ring };

// Acquisition geometry and solver settings. Lengths are in grid units (h = 1),
// times in units of h/c.
struct ForwardConfig {
  int m = 64;                     // grid side of the physical region
  double c = 1.0;                 // sound speed, homogeneous
  double cfl = 0.5;               // Courant number, must stay <= 1/sqrt(2)
  int n_det = 64;                 // detector count
  int n_t = 192;                  // recorded samples, first at t = 0
  int pad = 16;                   // sponge width outside the physical region
  double sponge_strength = 0.54;  // per-step damping at the outer edge, quadratic ramp
  DetectorLayout layout = DetectorLayout::top_line;
  uint64_t matrix_cap_bytes = 2ull << 30;

  double dt() const { return cfl / c; }
  void validate() const;
  std::string serialize() const;
  static ForwardConfig parse(const std::string& text);
  uint64_t fingerprint() const;

  // (row, col) on the physical grid
  std::vector<std::pair<int, int>> detector_positions() const;
  // inward unit normal per detector
  std::vector<std::pair<double, double>> detector_normals() const;
};

struct SensorData {
  TensorD samples;  // n_det x n_t
  double dt = 0;
  std::vector<std::pair<int, int>> detectors;

  int n_det() const { return samples.shape[0]; }
  int n_t() const { return samples.shape[1]; }
};

// Leapfrog solution of the homogeneous wave initial value problem with the
// initial pressure f, zero initial velocity, sponge-absorbed outer boundary.
// Samples the field at the detector nodes at every step.
SensorData simulate_wave(const Image& f, const ForwardConfig& cfg);

// Dense acoustic operator. Rows are (detector, time) pairs in row-major order,
// columns are image pixels; the adjoint is exactly the transpose.
struct ForwardMatrix {
  int rows = 0;  // T = n_det * n_t
  int cols = 0;  // M = m * m
  std::vector<double> a;  // row-major
  ForwardConfig cfg;
  uint64_t fingerprint = 0;

  mutable std::vector<float> a32;  // lazily built single-precision copy
  const std::vector<float>& f32() const;

  void apply(const double* f, double* g) const;          // g = A f
  void apply_adjoint(const double* g, double* f) const;  // f = A^T g
  TensorD apply(const Image& f) const;
  Image apply_adjoint(const TensorD& g) const;

  // B-column blocked products for batches of vectors (column-major batches).
  void apply_batch(const double* f, int b, double* g) const;
  void apply_adjoint_batch(const double* g, int b, double* f) const;

  SensorData wrap(TensorD samples) const;
};

ForwardMatrix assemble_matrix(const ForwardConfig& cfg);

void save_matrix(const std::string& path, const ForwardMatrix& A);
ForwardMatrix load_matrix(const std::string& path);

// g + e with e ~ N(0, (level * max|g|)^2), i.i.d.
SensorData add_noise(const SensorData& g, double level, RngStream& rng);

// Gram matrix A^T A (M x M), single precision, for fast model-based training.
std::vector<float> normal_matrix_f32(const ForwardMatrix& A);

// Largest singular value of A, estimated by power iteration on A^T A.
double op_norm_estimate(const ForwardMatrix& A, int iters = 50, uint64_t seed = 1234);

// --- internals shared with the time-reversal solver --------------------------
namespace wave {

struct Stepper {
  int m, pad, n;      // n = m + 2*pad
  double lam2;        // (c*dt/h)^2
  bool pml = false;
  std::vector<double> p, p_prev, p_next;
  std::vector<double> bi, ai, bh, ah;              // recursion coefficients per axis node
  std::vector<double> psix, psiy, zetax, zetay;    // convolution memory
  std::vector<double> etax, etay;                  // half-node differences

  Stepper(const ForwardConfig& cfg, bool with_sponge = true);
  void load_initial(const Image& f);     // p = f, zero velocity start
  void step(bool first);
  double& at(int row, int col);          // physical-grid indexing
  Image crop() const;
  double discrete_energy() const;        // conserved invariant of the scheme
};

}  // namespace wave

}  // namespace patkit
