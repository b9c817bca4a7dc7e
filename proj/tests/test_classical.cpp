#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "patkit/classical.hpp"

using namespace patkit;

namespace {

ForwardConfig line_cfg() {
  ForwardConfig cfg;
  cfg.m = 32;
  cfg.n_det = 32;
  cfg.n_t = 96;
  return cfg;
}

ForwardConfig ring_cfg() {
  ForwardConfig cfg = line_cfg();
  cfg.layout = DetectorLayout::ring;
  cfg.n_det = 4 * (cfg.m - 1);
  return cfg;
}

Image blob(int m, double r0, double c0, double sig = 1.5) {
  Image f({m, m});
  for (int r = 0; r < m; ++r)
    for (int c = 0; c < m; ++c)
      f.at(r, c) = std::exp(-((r - r0) * (r - r0) + (c - c0) * (c - c0)) / (2 * sig * sig));
  return f;
}

std::pair<int, int> argmax(const Image& im) {
  int br = 0, bc = 0;
  double bv = -1e300;
  for (int r = 0; r < im.shape[0]; ++r)
    for (int c = 0; c < im.shape[1]; ++c)
      if (im.at(r, c) > bv) {
        bv = im.at(r, c);
        br = r;
        bc = c;
      }
  return {br, bc};
}

double psnr_local(const Image& f, const Image& t) {
  double mx = 0, mse = 0;
  for (size_t i = 0; i < t.size(); ++i) {
    mx = std::max(mx, t.data[i]);
    double d = f.data[i] - t.data[i];
    mse += d * d;
  }
  mse /= (double)t.size();
  return 20.0 * std::log10(mx / std::sqrt(mse));
}

double rel_dist(const Image& a, const Image& b) {
  double num = 0, den = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    den += b.data[i] * b.data[i];
  }
  return std::sqrt(num / (den + 1e-300));
}

// shared fixtures; assembled once per binary run
const ForwardMatrix& line_matrix() {
  static ForwardMatrix A = assemble_matrix(line_cfg());
  return A;
}
const ForwardMatrix& ring_matrix() {
  static ForwardMatrix A = assemble_matrix(ring_cfg());
  return A;
}

}  // namespace

TEST_CASE("zero data reconstructs to zero everywhere") {
  ForwardConfig cfg = line_cfg();
  SensorData g;
  g.samples = TensorD({cfg.n_det, cfg.n_t});
  g.dt = cfg.dt();
  g.detectors = cfg.detector_positions();
  for (double v : backproject(g, cfg).data) CHECK(v == 0.0);
  for (double v : ubp2d(g, cfg).data) CHECK(v == 0.0);
  for (double v : fft_planar_recon(g, cfg).data) CHECK(v == 0.0);
  for (double v : time_reversal(g, cfg).data) CHECK(v == 0.0);
  for (double v : iterative_time_reversal(g, cfg, 1).data) CHECK(v == 0.0);
  for (double v : adjoint_recon(line_matrix(), g).data) CHECK(v == 0.0);
  VariationalConfig vc;
  vc.n_iter = 3;
  for (double v : gradient_descent(line_matrix(), g, vc).f.data) CHECK(v == 0.0);
}

TEST_CASE("point source localization, limited view") {
  ForwardConfig cfg = line_cfg();
  Image f = blob(32, 20, 14);
  SensorData g = simulate_wave(f, cfg);

  auto [br, bc] = argmax(backproject(g, cfg));
  CHECK(std::abs(br - 20) <= 1);
  CHECK(std::abs(bc - 14) <= 1);

  Image u = ubp2d(g, cfg);
  auto [ur, uc] = argmax(u);
  CHECK(std::abs(ur - 20) <= 2);
  CHECK(std::abs(uc - 14) <= 2);

  Image ff = fft_planar_recon(g, cfg);
  auto [fr, fc] = argmax(ff);
  CHECK(std::abs(fr - 20) <= 2);
  CHECK(std::abs(fc - 14) <= 2);

  auto [ar, ac] = argmax(adjoint_recon(line_matrix(), g));
  CHECK(std::abs(ar - 20) <= 1);
  CHECK(std::abs(ac - 14) <= 1);
}

TEST_CASE("ubp2d has a narrower main lobe than delay-and-sum") {
  ForwardConfig cfg = line_cfg();
  Image f = blob(32, 20, 16, 1.0);
  SensorData g = simulate_wave(f, cfg);
  auto fwhm_row = [](const Image& im, int row) {
    double mx = 0;
    int pk = 0;
    for (int c = 0; c < im.shape[1]; ++c)
      if (im.at(row, c) > mx) {
        mx = im.at(row, c);
        pk = c;
      }
    double lo = pk, hi = pk;
    for (int c = pk; c >= 0 && im.at(row, c) >= mx / 2; --c) lo = c;
    for (int c = pk; c < im.shape[1] && im.at(row, c) >= mx / 2; ++c) hi = c;
    return hi - lo;
  };
  Image bp = backproject(g, cfg);
  Image ub = ubp2d(g, cfg);
  auto [r_u, c_u] = argmax(ub);
  CHECK(fwhm_row(ub, r_u) < fwhm_row(bp, argmax(bp).first));
}

TEST_CASE("linear operators satisfy superposition") {
  ForwardConfig cfg = line_cfg();
  RngStream rng(4);
  SensorData g1, g2, gc;
  g1.samples = TensorD({cfg.n_det, cfg.n_t});
  g1.dt = cfg.dt();
  g1.detectors = cfg.detector_positions();
  g2 = g1;
  gc = g1;
  for (size_t i = 0; i < g1.samples.size(); ++i) {
    g1.samples.data[i] = rng.uniform(-1, 1);
    g2.samples.data[i] = rng.uniform(-1, 1);
    gc.samples.data[i] = 2.0 * g1.samples.data[i] - 0.5 * g2.samples.data[i];
  }
  auto combine = [&](const Image& a, const Image& b) {
    Image out = a;
    for (size_t i = 0; i < out.size(); ++i) out.data[i] = 2.0 * a.data[i] - 0.5 * b.data[i];
    return out;
  };
  CHECK(rel_dist(backproject(gc, cfg), combine(backproject(g1, cfg), backproject(g2, cfg))) <=
        1e-10);
  CHECK(rel_dist(ubp2d(gc, cfg), combine(ubp2d(g1, cfg), ubp2d(g2, cfg))) <= 1e-10);
  CHECK(rel_dist(fft_planar_recon(gc, cfg),
                 combine(fft_planar_recon(g1, cfg), fft_planar_recon(g2, cfg))) <= 1e-10);
  CHECK(rel_dist(time_reversal(gc, cfg), combine(time_reversal(g1, cfg), time_reversal(g2, cfg))) <=
        1e-10);
  // doubling the data exactly doubles delay-and-sum
  SensorData gd2 = g1;
  for (auto& v : gd2.samples.data) v *= 2.0;
  Image bp1 = backproject(g1, cfg);
  Image bp2 = backproject(gd2, cfg);
  for (size_t i = 0; i < bp1.size(); ++i) CHECK(bp2.data[i] == 2.0 * bp1.data[i]);
}

TEST_CASE("adjoint_recon equals the matrix adjoint exactly") {
  ForwardConfig cfg = line_cfg();
  Image f = blob(32, 12, 25);
  SensorData g = simulate_wave(f, cfg);
  Image a = adjoint_recon(line_matrix(), g);
  Image b = line_matrix().apply_adjoint(g.samples);
  CHECK(a.data == b.data);
}

TEST_CASE("evanescent masking is idempotent") {
  ForwardConfig cfg = line_cfg();
  Image f = blob(32, 18, 10);
  SensorData g = simulate_wave(f, cfg);
  Image once = fft_planar_recon(g, cfg, 1);
  Image twice = fft_planar_recon(g, cfg, 2);
  CHECK(once.data == twice.data);
}

TEST_CASE("fft reconstruction needs the full uniform line") {
  ForwardConfig cfg = line_cfg();
  cfg.n_det = 16;  // detectors every other pixel
  SensorData g;
  g.samples = TensorD({cfg.n_det, cfg.n_t});
  g.dt = cfg.dt();
  g.detectors = cfg.detector_positions();
  CHECK_THROWS_AS(fft_planar_recon(g, cfg), ConfigError);
}

TEST_CASE("time reversal: full view recovers, limited view leaves signed arcs") {
  Image f = blob(32, 20, 14);
  ForwardConfig lim = line_cfg(), full = ring_cfg();
  Image tr_lim = time_reversal(simulate_wave(f, lim), lim);
  Image tr_full = time_reversal(simulate_wave(f, full), full);
  CHECK(psnr_local(tr_full, f) >= 30.0);
  CHECK(psnr_local(tr_lim, f) < psnr_local(tr_full, f));
  double mn = 1e300;
  for (double v : tr_lim.data) mn = std::min(mn, v);
  CHECK(mn < -0.01);  // arc artifacts occur with both signs
}

TEST_CASE("iterative time reversal: residual monotone, quality improves") {
  ForwardConfig cfg = ring_cfg();
  Image f = blob(32, 20, 14);
  SensorData g = simulate_wave(f, cfg);
  // independent replication of the update to watch the residual
  Image fk = time_reversal(g, cfg);
  double prev = 1e300;
  for (int it = 1; it <= 10; ++it) {
    SensorData sim = simulate_wave(fk, cfg);
    double nrm = 0;
    for (size_t i = 0; i < sim.samples.size(); ++i) {
      sim.samples.data[i] -= g.samples.data[i];
      nrm += sim.samples.data[i] * sim.samples.data[i];
    }
    nrm = std::sqrt(nrm);
    CHECK(nrm <= prev * (1 + 1e-12));
    prev = nrm;
    Image corr = time_reversal(sim, cfg);
    for (size_t i = 0; i < fk.size(); ++i) fk.data[i] -= corr.data[i];
  }
  Image f5 = iterative_time_reversal(g, cfg, 5);
  Image f1 = iterative_time_reversal(g, cfg, 1);
  CHECK(psnr_local(f5, f) >= psnr_local(f1, f));
}

TEST_CASE("gradient descent: monotone objective and recovery of exact data") {
  const ForwardMatrix& A = ring_matrix();
  Image f = blob(32, 20, 14);
  SensorData g = A.wrap(A.apply(f));
  VariationalConfig vc;
  vc.n_iter = 500;
  SolveTrace tr = gradient_descent(A, g, vc);
  for (size_t i = 1; i < tr.objective.size(); ++i) CHECK(tr.objective[i] <= tr.objective[i - 1]);
  CHECK(rel_dist(tr.f, f) <= 0.05);
}

TEST_CASE("gradient descent rejects an unstable step size") {
  const ForwardMatrix& A = line_matrix();
  SensorData g = A.wrap(TensorD({A.cfg.n_det, A.cfg.n_t}));
  VariationalConfig vc;
  vc.eta = 1000.0;
  CHECK_THROWS_AS(gradient_descent(A, g, vc), ConfigError);
}

TEST_CASE("early stopping halts a flat objective") {
  const ForwardMatrix& A = line_matrix();
  Image f = blob(32, 10, 10);
  SensorData g = A.wrap(A.apply(f));
  VariationalConfig vc;
  vc.n_iter = 400;
  vc.tol = 0.05;
  SolveTrace tr = gradient_descent(A, g, vc);
  CHECK(tr.objective.size() < 400);
}

TEST_CASE("tikhonov: residual, direct-solve oracle, alpha monotonicity") {
  ForwardConfig cfg;
  cfg.m = 8;
  cfg.n_det = 8;
  cfg.n_t = 24;
  cfg.pad = 6;
  ForwardMatrix A = assemble_matrix(cfg);
  Image f = blob(8, 5, 4, 1.0);
  SensorData g = A.wrap(A.apply(f));
  const double alpha = 1e-2;
  Image x = tikhonov_solve(A, g, alpha, 1e-12);

  // normal-equation residual
  std::vector<double> tmp(A.rows), nrm(A.cols), b(A.cols);
  A.apply(x.ptr(), tmp.data());
  A.apply_adjoint(tmp.data(), nrm.data());
  A.apply_adjoint(g.samples.ptr(), b.data());
  double rn = 0, bn = 0;
  for (int i = 0; i < A.cols; ++i) {
    double r = nrm[i] + alpha * x.data[i] - b[i];
    rn += r * r;
    bn += b[i] * b[i];
  }
  CHECK(std::sqrt(rn / bn) <= 1e-8);

  // dense direct factorization on the 8x8 grid
  const int n = A.cols;
  std::vector<double> N((size_t)n * n, 0.0);
  for (int t = 0; t < A.rows; ++t)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        N[(size_t)i * n + j] += A.a[(size_t)t * n + i] * A.a[(size_t)t * n + j];
  for (int i = 0; i < n; ++i) N[(size_t)i * n + i] += alpha;
  std::vector<double> rhs = b;
  for (int col = 0; col < n; ++col) {  // gaussian elimination with partial pivoting
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(N[(size_t)r * n + col]) > std::abs(N[(size_t)piv * n + col])) piv = r;
    for (int c = 0; c < n; ++c) std::swap(N[(size_t)col * n + c], N[(size_t)piv * n + c]);
    std::swap(rhs[col], rhs[piv]);
    for (int r = col + 1; r < n; ++r) {
      double m = N[(size_t)r * n + col] / N[(size_t)col * n + col];
      for (int c = col; c < n; ++c) N[(size_t)r * n + c] -= m * N[(size_t)col * n + c];
      rhs[r] -= m * rhs[col];
    }
  }
  std::vector<double> xd(n);
  for (int r = n - 1; r >= 0; --r) {
    double s = rhs[r];
    for (int c = r + 1; c < n; ++c) s -= N[(size_t)r * n + c] * xd[c];
    xd[r] = s / N[(size_t)r * n + r];
  }
  double dn = 0, dd = 0;
  for (int i = 0; i < n; ++i) {
    dn += (x.data[i] - xd[i]) * (x.data[i] - xd[i]);
    dd += xd[i] * xd[i];
  }
  CHECK(std::sqrt(dn / dd) <= 1e-8);

  // ||f|| never grows when alpha doubles
  double prev_norm = 1e300;
  for (double a2 : {1e-2, 2e-2, 4e-2, 8e-2}) {
    Image xa = tikhonov_solve(A, g, a2);
    double nf = 0;
    for (double v : xa.data) nf += v * v;
    CHECK(nf <= prev_norm * (1 + 1e-12));
    prev_norm = nf;
  }

  // over-regularized limit is effectively zero
  double nrmA = op_norm_estimate(A);
  Image x_big = tikhonov_solve(A, g, 1e6 * nrmA * nrmA);
  double nb = 0, nb_ref = 0;
  for (double v : x_big.data) nb += v * v;
  for (double v : b) nb_ref += v * v;
  CHECK(std::sqrt(nb) <= 1e-3 * std::sqrt(nb_ref));

  CHECK_THROWS_AS(tikhonov_solve(A, g, alpha, 1e-10, 1), ConvergenceError);
  CHECK_THROWS_AS(tikhonov_solve(A, g, 0.0), ConfigError);
}

TEST_CASE("tv prox: zero weight, constants, step edge beats a grid search") {
  Image h({8, 8});
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) h.at(r, c) = c < 4 ? 0.0 : 1.0;

  Image same = tv_prox(h, 0.0, 50);
  CHECK(same.data == h.data);

  Image flat({6, 6});
  for (auto& v : flat.data) v = 0.37;
  Image pf = tv_prox(flat, 0.25, 50);
  for (double v : pf.data) CHECK(v == doctest::Approx(0.37).epsilon(1e-12));

  const double lambda = 0.1;
  auto objective = [&](const Image& y) {
    double s = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      double d = y.data[i] - h.data[i];
      s += 0.5 * d * d;
    }
    return s + lambda * tv_value(y);
  };
  Image p = tv_prox(h, lambda, 500);
  CHECK(objective(p) <= objective(h));
  // brute force over shrunk-edge candidates on a 0.02 grid
  double best = 1e300;
  for (int k = 0; k <= 25; ++k) {
    double a = 0.02 * k;
    Image y({8, 8});
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c) y.at(r, c) = c < 4 ? a : 1.0 - a;
    best = std::min(best, objective(y));
  }
  CHECK(objective(p) <= best);
}

TEST_CASE("tv prox is non-expansive on random pairs") {
  RngStream rng(12);
  for (int it = 0; it < 5; ++it) {
    Image a({10, 10}), b({10, 10});
    for (size_t i = 0; i < a.size(); ++i) {
      a.data[i] = rng.uniform(-1, 1);
      b.data[i] = rng.uniform(-1, 1);
    }
    Image pa = tv_prox(a, 0.2, 200);
    Image pb = tv_prox(b, 0.2, 200);
    double dp = 0, d0 = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      dp += (pa.data[i] - pb.data[i]) * (pa.data[i] - pb.data[i]);
      d0 += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
    }
    CHECK(std::sqrt(dp) <= std::sqrt(d0) + 1e-6);
  }
}

TEST_CASE("proximal gradient: zero weight equals gradient descent bitwise") {
  const ForwardMatrix& A = line_matrix();
  Image f = blob(32, 18, 20);
  SensorData g = A.wrap(A.apply(f));
  VariationalConfig vc;
  vc.n_iter = 5;
  vc.alpha = 0.0;
  vc.nonneg = false;
  SolveTrace pg = proximal_gradient_tv(A, g, vc);
  SolveTrace gd = gradient_descent(A, g, vc);
  CHECK(pg.f.data == gd.f.data);
}

TEST_CASE("proximal gradient: composite objective non-increasing under noise") {
  const ForwardMatrix& A = line_matrix();
  Image f = blob(32, 20, 14);
  RngStream rng(3);
  SensorData g = add_noise(A.wrap(A.apply(f)), 0.01, rng);
  VariationalConfig vc;
  vc.n_iter = 40;
  vc.alpha = 2e-4;
  vc.nonneg = false;
  SolveTrace pg = proximal_gradient_tv(A, g, vc);
  for (size_t i = 1; i < pg.objective.size(); ++i)
    CHECK(pg.objective[i] <= pg.objective[i - 1] + 1e-9);
}

TEST_CASE("full view: every reconstruction lands the argmax within 2 px") {
  Image f = blob(32, 19, 13);
  ForwardConfig full = ring_cfg();
  const ForwardMatrix& A = ring_matrix();
  SensorData g = simulate_wave(f, full);
  auto near = [&](const Image& im) {
    auto [r, c] = argmax(im);
    return std::abs(r - 19) <= 2 && std::abs(c - 13) <= 2;
  };
  CHECK(near(backproject(g, full)));
  CHECK(near(ubp2d(g, full)));
  CHECK(near(adjoint_recon(A, g)));
  CHECK(near(time_reversal(g, full)));
  CHECK(near(iterative_time_reversal(g, full, 3)));
  VariationalConfig vc;
  vc.n_iter = 100;
  CHECK(near(gradient_descent(A, g, vc).f));
  CHECK(near(tikhonov_solve(A, g, 1e-3)));
  vc.alpha = 1e-4;
  CHECK(near(proximal_gradient_tv(A, g, vc).f));
  // planar series method on its own line geometry
  ForwardConfig line = line_cfg();
  CHECK(near(fft_planar_recon(simulate_wave(f, line), line)));
}
