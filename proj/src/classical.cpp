#include "patkit/classical.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>

#include "patkit/kernels.hpp"

namespace patkit {

namespace {

void check_data(const SensorData& g, const ForwardConfig& cfg) {
  if (g.n_det() != cfg.n_det || g.n_t() != cfg.n_t)
    throw DimensionError("sensor data does not match the geometry");
  if (!g.samples.finite()) throw NumericError("sensor data not finite");
}

double operator_norm(const ForwardMatrix& A) {
  static thread_local std::pair<uint64_t, double> cache{0, 0};
  if (cache.first == A.fingerprint && cache.second > 0) return cache.second;
  double nrm = op_norm_estimate(A, 50);
  cache = {A.fingerprint, nrm};
  return nrm;
}

double step_size(const ForwardMatrix& A, const VariationalConfig& cfg) {
  double nrm2 = operator_norm(A);
  nrm2 *= nrm2;
  if (cfg.eta <= 0) return nrm2 > 0 ? 1.0 / nrm2 : 1.0;
  if (cfg.eta * nrm2 >= 2.0)
    throw ConfigError("step size violates eta * ||A||^2 < 2");
  return cfg.eta;
}

}  // namespace

Image backproject(const SensorData& g, const ForwardConfig& cfg) {
  check_data(g, cfg);
  const int m = cfg.m;
  const int nt = cfg.n_t;
  const double inv_step = 1.0 / (cfg.c * g.dt);  // samples per unit distance
  Image out({m, m});
  for (size_t d = 0; d < g.detectors.size(); ++d) {
    const auto [rs, cs] = g.detectors[d];
    const double* row = g.samples.ptr() + d * nt;
    for (int r = 0; r < m; ++r) {
      double dr = r - rs;
      for (int c = 0; c < m; ++c) {
        double dc = c - cs;
        double s = std::sqrt(dr * dr + dc * dc) * inv_step;
        int k = (int)s;
        if (k + 1 >= nt) continue;
        double w = s - k;
        out.data[(size_t)r * m + c] += (1.0 - w) * row[k] + w * row[k + 1];
      }
    }
  }
  return out;
}

Image adjoint_recon(const ForwardMatrix& A, const SensorData& g) {
  if ((int)g.samples.size() != A.rows) throw DimensionError("data size mismatch");
  return A.apply_adjoint(g.samples);
}

Image ubp2d(const SensorData& g, const ForwardConfig& cfg,
            const std::function<double(double)>& weight) {
  check_data(g, cfg);
  const int m = cfg.m;
  const int nt = cfg.n_t;
  const double dt = g.dt;
  const double c = cfg.c;
  const double pitch = cfg.layout == DetectorLayout::top_line ? (double)m / cfg.n_det : 1.0;
  auto normals = cfg.detector_normals();

  // d/dt (g / t) per detector, central differences; t = 0 extended flat
  TensorD filt({cfg.n_det, nt});
  std::vector<double> q(nt);
  for (int d = 0; d < cfg.n_det; ++d) {
    const double* row = g.samples.ptr() + (size_t)d * nt;
    for (int k = 1; k < nt; ++k) q[k] = row[k] / (k * dt);
    q[0] = q[1];
    double* out = filt.ptr() + (size_t)d * nt;
    for (int k = 1; k + 1 < nt; ++k) out[k] = (q[k + 1] - q[k - 1]) / (2 * dt);
    out[0] = (q[1] - q[0]) / dt;
    out[nt - 1] = (q[nt - 1] - q[nt - 2]) / dt;
  }

  const double prefac = -4.0 / (2.0 * M_PI * c * c) * pitch;
  const double t_end = (nt - 1) * dt;
  Image outimg({m, m});
  for (int d = 0; d < cfg.n_det; ++d) {
    const auto [rs, cs] = g.detectors[d];
    const auto [nr, nc] = normals[d];
    const double* fr = filt.ptr() + (size_t)d * nt;
    for (int r = 0; r < m; ++r) {
      for (int cc = 0; cc < m; ++cc) {
        double dr = r - rs, dc = cc - cs;
        double rad = std::sqrt(dr * dr + dc * dc);
        if (rad < 0.5) continue;
        double t0 = rad / c;
        int k0 = (int)std::ceil((t0 + 0.5 * dt) / dt);
        if (k0 >= nt) continue;
        // analytic cell integrals of 1/sqrt(t^2 - t0^2): acosh(t/t0) differences
        double integral = 0.0;
        double prev_edge = t0;
        for (int k = k0; k < nt; ++k) {
          double hi = std::min((k + 0.5) * dt, t_end);
          if (hi <= prev_edge) break;
          double wcell = std::acosh(hi / t0) - std::acosh(prev_edge / t0);
          integral += fr[k] * wcell;
          prev_edge = hi;
        }
        double cosa = (dr * nr + dc * nc) / rad;
        double kap = weight ? weight(rad) : rad;
        outimg.data[(size_t)r * m + cc] += prefac * integral * kap * cosa;
      }
    }
  }
  if (!outimg.finite()) throw NumericError("ubp2d produced non-finite values");
  return outimg;
}

// --- planar series reconstruction -------------------------------------------

namespace {

void dft_1d(const std::complex<double>* in, std::complex<double>* out, int n, int sign) {
  // O(n^2); the grids here are small
  for (int k = 0; k < n; ++k) {
    std::complex<double> s = 0;
    for (int j = 0; j < n; ++j) {
      double ang = sign * 2.0 * M_PI * k * j / n;
      s += in[j] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    out[k] = s;
  }
}

}  // namespace

Image fft_planar_recon(const SensorData& g, const ForwardConfig& cfg, int mask_passes) {
  check_data(g, cfg);
  if (cfg.layout != DetectorLayout::top_line || cfg.n_det != cfg.m)
    throw ConfigError("planar series reconstruction needs a full top-edge line of detectors");
  const int m = cfg.m;
  const int nt = cfg.n_t;
  const double dt = g.dt;
  const double c = cfg.c;
  const int m2 = 2 * m;  // padded vertical axis keeps the mirror image out of the frame
  const double dw = M_PI / ((nt - 1) * dt);  // cosine-transform frequency step

  // cosine transform in t (trapezoid end weights)
  TensorD gc({m, nt});
  for (int s = 0; s < m; ++s) {
    const double* row = g.samples.ptr() + (size_t)s * nt;
    for (int j = 0; j < nt; ++j) {
      double acc = 0;
      for (int k = 0; k < nt; ++k) {
        double wgt = (k == 0 || k == nt - 1) ? 0.5 : 1.0;
        acc += wgt * row[k] * std::cos(dw * j * k * dt);
      }
      gc.data[(size_t)s * nt + j] = acc * dt;
    }
  }

  // Fourier transform along the detector line, per frequency bin
  std::vector<std::complex<double>> col(m), colft(m);
  std::vector<std::complex<double>> ghat((size_t)m * nt);
  for (int j = 0; j < nt; ++j) {
    for (int s = 0; s < m; ++s) col[s] = gc.data[(size_t)s * nt + j];
    dft_1d(col.data(), colft.data(), m, -1);
    for (int s = 0; s < m; ++s) ghat[(size_t)s * nt + j] = colft[s];
  }

  for (int pass = 0; pass < mask_passes; ++pass) {
    for (int i1 = 0; i1 < m; ++i1) {
      double k1 = 2.0 * M_PI * (i1 <= m / 2 ? i1 : i1 - m) / m;
      for (int j = 0; j < nt; ++j)
        if (j * dw < c * std::abs(k1)) ghat[(size_t)i1 * nt + j] = 0;
    }
  }

  // remap onto the image wavenumber grid
  std::vector<std::complex<double>> spec((size_t)m * m2);
  for (int i1 = 0; i1 < m; ++i1) {
    double k1 = 2.0 * M_PI * (i1 <= m / 2 ? i1 : i1 - m) / m;
    for (int i2 = 0; i2 < m2; ++i2) {
      double k2 = 2.0 * M_PI * (i2 <= m2 / 2 ? i2 : i2 - m2) / m2;
      double w = c * std::sqrt(k1 * k1 + k2 * k2);
      std::complex<double> val = 0;
      if (w > 0) {
        double jf = w / dw;
        int j0 = (int)jf;
        if (j0 + 1 <= nt - 1) {
          double fr = jf - j0;
          std::complex<double> gv =
              (1.0 - fr) * ghat[(size_t)i1 * nt + j0] + fr * ghat[(size_t)i1 * nt + j0 + 1];
          val = gv * (std::abs(k2) / w);
        }
      }
      spec[(size_t)i1 * m2 + i2] = val;
    }
  }

  // inverse transform, rows first then columns
  std::vector<std::complex<double>> tmp((size_t)m * m2);
  std::vector<std::complex<double>> line(std::max(m, m2)), linet(std::max(m, m2));
  for (int i1 = 0; i1 < m; ++i1)
    dft_1d(&spec[(size_t)i1 * m2], &tmp[(size_t)i1 * m2], m2, +1);
  Image out({m, m});
  for (int i2 = 0; i2 < m; ++i2) {  // only the physical rows
    for (int i1 = 0; i1 < m; ++i1) line[i1] = tmp[(size_t)i1 * m2 + i2];
    dft_1d(line.data(), linet.data(), m, +1);
    for (int i1 = 0; i1 < m; ++i1) out.data[(size_t)i2 * m + i1] = linet[i1].real() / (m * m2);
  }
  if (!out.finite()) throw NumericError("planar reconstruction produced non-finite values");
  return out;
}

Image time_reversal(const SensorData& g, const ForwardConfig& cfg) {
  check_data(g, cfg);
  wave::Stepper sim(cfg);
  auto det = cfg.detector_positions();
  const int n = sim.n;
  const int nt = cfg.n_t;
  std::vector<size_t> det_idx(det.size());
  for (size_t d = 0; d < det.size(); ++d)
    det_idx[d] = (size_t)(det[d].first + cfg.pad) * n + (det[d].second + cfg.pad);
  for (int s = 0; s < nt; ++s) {
    if (s > 0) sim.step(s == 1);
    for (size_t d = 0; d < det_idx.size(); ++d)
      sim.p[det_idx[d]] = g.samples.data[d * nt + (nt - 1 - s)];
  }
  return sim.crop();
}

Image iterative_time_reversal(const SensorData& g, const ForwardConfig& cfg, int n_iter) {
  if (n_iter < 1) throw ConfigError("n_iter must be >= 1");
  Image f = time_reversal(g, cfg);
  double r0 = -1;
  for (int it = 1; it <= n_iter; ++it) {
    SensorData sim = simulate_wave(f, cfg);
    TensorD resid = sim.samples;
    double nrm = 0;
    for (size_t i = 0; i < resid.size(); ++i) {
      resid.data[i] -= g.samples.data[i];
      nrm += resid.data[i] * resid.data[i];
    }
    nrm = std::sqrt(nrm);
    if (r0 < 0) r0 = nrm;
    if (r0 > 0 && nrm > 10.0 * r0)
      throw DivergenceError("residual grew 10x at iteration " + std::to_string(it));
    SensorData rs = sim;
    rs.samples = std::move(resid);
    Image corr = time_reversal(rs, cfg);
    for (size_t i = 0; i < f.size(); ++i) f.data[i] -= corr.data[i];
  }
  return f;
}

SolveTrace gradient_descent(const ForwardMatrix& A, const SensorData& g, VariationalConfig cfg) {
  if ((int)g.samples.size() != A.rows) throw DimensionError("data size mismatch");
  const double eta = step_size(A, cfg);
  SolveTrace out;
  out.f = Image({A.cfg.m, A.cfg.m});
  std::vector<double> r(A.rows), grad(A.cols);
  int flat = 0;
  double prev = 0;
  for (int it = 0; it < cfg.n_iter; ++it) {
    A.apply(out.f.ptr(), r.data());
    for (int i = 0; i < A.rows; ++i) r[i] -= g.samples.data[i];
    double e = 0.5 * kern::ddot(r.data(), r.data(), A.rows);
    out.objective.push_back(e);
    A.apply_adjoint(r.data(), grad.data());
    for (int i = 0; i < A.cols; ++i) out.f.data[i] -= eta * grad[i];
    if (cfg.tol > 0 && it > 0) {
      double rel = prev > 0 ? (prev - e) / prev : 0;
      flat = rel < cfg.tol ? flat + 1 : 0;
      if (flat >= 5) break;
    }
    prev = e;
  }
  return out;
}

Image tikhonov_solve(const ForwardMatrix& A, const SensorData& g, double alpha, double tol,
                     int max_iter) {
  if (alpha <= 0) throw ConfigError("alpha must be positive");
  if ((int)g.samples.size() != A.rows) throw DimensionError("data size mismatch");
  const int n = A.cols;
  std::vector<double> b(n), x(n, 0.0), r(n), p(n), ap(n), tmp(A.rows);
  A.apply_adjoint(g.samples.ptr(), b.data());
  double bnorm = std::sqrt(kern::ddot(b.data(), b.data(), n));
  if (bnorm == 0) return Image({A.cfg.m, A.cfg.m});
  r = b;
  p = r;
  double rs = kern::ddot(r.data(), r.data(), n);
  for (int it = 0; it < max_iter; ++it) {
    A.apply(p.data(), tmp.data());
    A.apply_adjoint(tmp.data(), ap.data());
    kern::daxpy(alpha, p.data(), ap.data(), n);
    double pap = kern::ddot(p.data(), ap.data(), n);
    if (pap <= 0) throw ConvergenceError("normal operator lost positivity");
    double step = rs / pap;
    kern::daxpy(step, p.data(), x.data(), n);
    kern::daxpy(-step, ap.data(), r.data(), n);
    double rs_new = kern::ddot(r.data(), r.data(), n);
    if (std::sqrt(rs_new) / bnorm <= tol) {
      Image out({A.cfg.m, A.cfg.m});
      out.data = x;
      return out;
    }
    double beta = rs_new / rs;
    rs = rs_new;
    for (int i = 0; i < n; ++i) p[i] = r[i] + beta * p[i];
  }
  throw ConvergenceError("cg stalled, relative residual " +
                         format_g17(std::sqrt(rs) / bnorm));
}

// --- total variation -----------------------------------------------------------

double tv_value(const Image& u) {
  const int h = u.shape[0], w = u.shape[1];
  double s = 0;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      double dx = j + 1 < w ? u.data[(size_t)i * w + j + 1] - u.data[(size_t)i * w + j] : 0;
      double dy = i + 1 < h ? u.data[(size_t)(i + 1) * w + j] - u.data[(size_t)i * w + j] : 0;
      s += std::sqrt(dx * dx + dy * dy);
    }
  }
  return s;
}

namespace {

// one projection update of the dual field; tau = 1/8 guarantees convergence
void tv_dual_sweep(const Image& h, double lambda, std::vector<double>& p1,
                   std::vector<double>& p2, std::vector<double>& div) {
  const int hh = h.shape[0], ww = h.shape[1];
  const double tau = 0.125;
  for (int i = 0; i < hh; ++i)
    for (int j = 0; j < ww; ++j) {
      double d = p1[(size_t)i * ww + j] + p2[(size_t)i * ww + j];
      if (j > 0) d -= p1[(size_t)i * ww + j - 1];
      if (i > 0) d -= p2[(size_t)(i - 1) * ww + j];
      div[(size_t)i * ww + j] = d - h.data[(size_t)i * ww + j] / lambda;
    }
  for (int i = 0; i < hh; ++i)
    for (int j = 0; j < ww; ++j) {
      size_t k = (size_t)i * ww + j;
      double gx = j + 1 < ww ? div[k + 1] - div[k] : 0;
      double gy = i + 1 < hh ? div[k + ww] - div[k] : 0;
      double denom = 1.0 + tau * std::sqrt(gx * gx + gy * gy);
      p1[k] = (p1[k] + tau * gx) / denom;
      p2[k] = (p2[k] + tau * gy) / denom;
    }
}

Image tv_prox_warm(const Image& h, double lambda, int inner, std::vector<double>& p1,
                   std::vector<double>& p2) {
  if (lambda < 0) throw ConfigError("lambda must be >= 0");
  if (lambda == 0 || inner <= 0) return h;
  const int hh = h.shape[0], ww = h.shape[1];
  std::vector<double> div((size_t)hh * ww);
  for (int it = 0; it < inner; ++it) tv_dual_sweep(h, lambda, p1, p2, div);
  Image out = h;
  for (int i = 0; i < hh; ++i)
    for (int j = 0; j < ww; ++j) {
      size_t k = (size_t)i * ww + j;
      double d = p1[k] + p2[k];
      if (j > 0) d -= p1[(size_t)i * ww + j - 1];
      if (i > 0) d -= p2[(size_t)(i - 1) * ww + j];
      out.data[k] -= lambda * d;
    }
  return out;
}

}  // namespace

Image tv_prox(const Image& h, double lambda, int inner) {
  std::vector<double> p1(h.size(), 0.0), p2(h.size(), 0.0);
  return tv_prox_warm(h, lambda, inner, p1, p2);
}

SolveTrace proximal_gradient_tv(const ForwardMatrix& A, const SensorData& g,
                                VariationalConfig cfg) {
  if ((int)g.samples.size() != A.rows) throw DimensionError("data size mismatch");
  const double eta = step_size(A, cfg);
  SolveTrace out;
  out.f = Image({A.cfg.m, A.cfg.m});
  std::vector<double> r(A.rows), grad(A.cols);
  std::vector<double> p1(A.cols, 0.0), p2(A.cols, 0.0);  // warm-started dual state
  for (int it = 0; it < cfg.n_iter; ++it) {
    A.apply(out.f.ptr(), r.data());
    for (int i = 0; i < A.rows; ++i) r[i] -= g.samples.data[i];
    A.apply_adjoint(r.data(), grad.data());
    Image step = out.f;
    for (int i = 0; i < A.cols; ++i) step.data[i] -= eta * grad[i];
    out.f = tv_prox_warm(step, eta * cfg.alpha, cfg.prox_inner, p1, p2);
    if (cfg.nonneg)
      for (auto& v : out.f.data) v = std::max(0.0, v);
    A.apply(out.f.ptr(), r.data());
    for (int i = 0; i < A.rows; ++i) r[i] -= g.samples.data[i];
    double e = 0.5 * kern::ddot(r.data(), r.data(), A.rows) + cfg.alpha * tv_value(out.f);
    out.objective.push_back(e);
  }
  return out;
}

}  // namespace patkit
