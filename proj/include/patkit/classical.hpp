#pragma once

#include <functional>
#include <vector>

#include "patkit/forward.hpp"

namespace patkit {

// Settings for the iterative solvers. A non-positive eta requests the safe
// default 1/||A||^2; any explicit eta must satisfy eta * ||A||^2 < 2.
struct VariationalConfig {
  double alpha = 0.0;   // regularisation weight
  double eta = 0.0;     // step size, <= 0 means auto
  int n_iter = 100;
  int prox_inner = 20;  // dual iterations per TV prox
  double tol = 0.0;     // early stop on relative objective decrease, 0 = off
  bool nonneg = true;   // project iterates onto f >= 0 after each prox
};

struct SolveTrace {
  Image f;
  std::vector<double> objective;  // E(f^(n)) per outer step
};

// Discrete delay-and-sum: each pixel accumulates g(x_s, |x - x_s|/c) over
// detectors, linearly interpolated in time. Delays past the recording are 0.
Image backproject(const SensorData& g, const ForwardConfig& cfg);

// f0 = A^T g, the canonical initial reconstruction.
Image adjoint_recon(const ForwardMatrix& A, const SensorData& g);

// Filtered backprojection with the 1/sqrt(t^2 - r^2/c^2) time kernel, the
// d/dt (g/t) data filter and cos(angle to the detector normal). The weight
// defaults to kappa(r) = r.
Image ubp2d(const SensorData& g, const ForwardConfig& cfg,
            const std::function<double(double)>& weight = nullptr);

// Planar series reconstruction: cosine transform in time, Fourier transform
// along the full top-edge detector line, dispersion remap, inverse FFT.
// mask_passes explicitly zeroes the evanescent bins (omega < c|k1|) that many
// times before the remap; the masking is idempotent.
Image fft_planar_recon(const SensorData& g, const ForwardConfig& cfg, int mask_passes = 0);

// Re-emits the measured series in reverse as a Dirichlet condition on the
// detector nodes; the field after the final step is the reconstruction.
Image time_reversal(const SensorData& g, const ForwardConfig& cfg);

// f <- f - TR(A f - g), starting from f = TR(g).
Image iterative_time_reversal(const SensorData& g, const ForwardConfig& cfg, int n_iter);

SolveTrace gradient_descent(const ForwardMatrix& A, const SensorData& g, VariationalConfig cfg);

// Conjugate-gradient solution of (A^T A + alpha I) f = A^T g.
Image tikhonov_solve(const ForwardMatrix& A, const SensorData& g, double alpha,
                     double tol = 1e-10, int max_iter = 2000);

// Isotropic total variation, forward differences, Neumann boundaries.
double tv_value(const Image& u);

// Approximate minimiser of lambda*TV(y) + 1/2 ||h - y||^2 by a fixed-count
// dual projection iteration.
Image tv_prox(const Image& h, double lambda, int inner = 20);

SolveTrace proximal_gradient_tv(const ForwardMatrix& A, const SensorData& g,
                                VariationalConfig cfg);

}  // namespace patkit
