#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <filesystem>

#include "patkit/forward.hpp"

using namespace patkit;

namespace {

ForwardConfig small_cfg() {
  ForwardConfig cfg;
  cfg.m = 16;
  cfg.n_det = 16;
  cfg.n_t = 48;
  cfg.pad = 8;
  return cfg;
}

// first local max of |g| above 30% of the global max; the dispersive coda of a
// grid impulse can carry larger late extrema, the physical front does not.
double arrival_time(const double* g, int nt, double dt) {
  double gm = 0;
  for (int k = 0; k < nt; ++k) gm = std::max(gm, std::abs(g[k]));
  double thr = 0.3 * gm;
  for (int k = 1; k + 1 < nt; ++k) {
    double v = std::abs(g[k]);
    if (v >= thr && v >= std::abs(g[k - 1]) && v >= std::abs(g[k + 1])) return k * dt;
  }
  return -1;
}

}  // namespace

TEST_CASE("config validation") {
  ForwardConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.cfl = 0.8;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ForwardConfig{};
  cfg.n_t = 100;  // below the diagonal travel time
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = ForwardConfig{};
  cfg.layout = DetectorLayout::ring;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.n_det = 4 * (cfg.m - 1);
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("config text serialization round trips") {
  ForwardConfig cfg = small_cfg();
  cfg.sponge_strength = 0.375;
  ForwardConfig back = ForwardConfig::parse(cfg.serialize());
  CHECK(back.serialize() == cfg.serialize());
  CHECK(back.fingerprint() == cfg.fingerprint());
  CHECK(back.fingerprint() != ForwardConfig{}.fingerprint());
}

TEST_CASE("zero initial pressure gives zero data") {
  ForwardConfig cfg = small_cfg();
  SensorData g = simulate_wave(Image({16, 16}), cfg);
  for (double v : g.samples.data) CHECK(v == 0.0);
}

TEST_CASE("impulse arrival matches d/c within two samples") {
  ForwardConfig cfg;
  cfg.m = 32;
  cfg.n_det = 32;
  cfg.n_t = 96;
  RngStream rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    int r = 6 + (int)rng.below(22);
    int c = 4 + (int)rng.below(24);
    Image f({32, 32});
    f.at(r, c) = 1.0;
    SensorData g = simulate_wave(f, cfg);
    int d = (int)rng.below(32);
    double dist = std::sqrt((double)r * r + (double)(c - d) * (c - d));
    double t = arrival_time(g.samples.ptr() + (size_t)d * cfg.n_t, cfg.n_t, g.dt);
    CHECK(std::abs(t - dist / cfg.c) <= 2 * g.dt);
  }
}

TEST_CASE("doubling the sound speed halves the arrival time") {
  ForwardConfig c1;
  c1.m = 32;
  c1.n_det = 32;
  c1.n_t = 96;
  ForwardConfig c2 = c1;
  c2.c = 2.0;
  Image f({32, 32});
  f.at(20, 16) = 1.0;
  SensorData g1 = simulate_wave(f, c1);
  SensorData g2 = simulate_wave(f, c2);
  double t1 = arrival_time(g1.samples.ptr() + 16 * c1.n_t, c1.n_t, g1.dt);
  double t2 = arrival_time(g2.samples.ptr() + 16 * c2.n_t, c2.n_t, g2.dt);
  CHECK(std::abs(t1 - 20.0) <= 2 * g1.dt);
  CHECK(std::abs(t2 - 10.0) <= 2 * g1.dt);  // tolerance of the slower clock
}

TEST_CASE("discrete energy is conserved without the sponge") {
  ForwardConfig cfg;
  cfg.m = 32;
  cfg.n_det = 32;
  cfg.pad = 60;
  cfg.n_t = 128;
  cfg.sponge_strength = 0;
  wave::Stepper sim(cfg);
  Image f({32, 32});
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      f.at(r, c) = std::exp(-0.1 * ((r - 16.0) * (r - 16.0) + (c - 16.0) * (c - 16.0)));
  sim.load_initial(f);
  sim.step(true);
  double e0 = sim.discrete_energy();
  for (int k = 0; k < 100; ++k) sim.step(false);
  double e1 = sim.discrete_energy();
  CHECK(std::abs(e1 - e0) / e0 < 1e-3);
}

TEST_CASE("sponge round trip reflects less than one percent") {
  ForwardConfig cfg;
  cfg.m = 128;
  cfg.n_det = 128;
  cfg.n_t = 400;
  wave::Stepper sim(cfg);
  const int n = sim.n;
  // downward-traveling plane pulse aimed at the bottom absorber
  const double src = 100 + cfg.pad;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      double r = i;
      sim.p[(size_t)i * n + j] = std::exp(-(r - src) * (r - src) / 8.0);
      double rp = r - src + cfg.cfl;
      sim.p_prev[(size_t)i * n + j] = std::exp(-rp * rp / 8.0);
    }
  size_t det = (size_t)cfg.pad * n + cfg.pad + cfg.m / 2;
  const double t_clear = (127 + cfg.pad - src) + (src - cfg.pad) - 18;
  double refl = 0;
  for (int k = 0; k < 560; ++k) {
    sim.step(false);
    if ((k + 1) * cfg.dt() > t_clear) refl = std::max(refl, std::abs(sim.p[det]));
  }
  CHECK(refl <= 0.01);  // incident amplitude is 1 by construction
}

TEST_CASE("matrix columns are impulse responses") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  CHECK(A.rows == 16 * 48);
  CHECK(A.cols == 256);
  RngStream rng(7);
  for (int it = 0; it < 10; ++it) {
    int j = (int)rng.below(A.cols);
    Image e({16, 16});
    e.data[j] = 1.0;
    SensorData s = simulate_wave(e, cfg);
    for (int t = 0; t < A.rows; ++t)
      CHECK(A.a[(size_t)t * A.cols + j] == s.samples.data[t]);
  }
}

TEST_CASE("assembly is deterministic") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix a = assemble_matrix(cfg);
  ForwardMatrix b = assemble_matrix(cfg);
  CHECK(a.fingerprint == b.fingerprint);
  CHECK(std::memcmp(a.a.data(), b.a.data(), a.a.size() * 8) == 0);
}

TEST_CASE("assembly refuses to blow the memory cap") {
  ForwardConfig cfg = small_cfg();
  cfg.matrix_cap_bytes = 1000;
  CHECK_THROWS_AS(assemble_matrix(cfg), SizeError);
}

TEST_CASE("adjoint identity within 1e-12 over 100 random pairs") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  RngStream rng(1);
  for (int it = 0; it < 100; ++it) {
    std::vector<double> f(A.cols), g(A.rows), Af(A.rows), Atg(A.cols);
    for (auto& v : f) v = rng.uniform(-1, 1);
    for (auto& v : g) v = rng.uniform(-1, 1);
    A.apply(f.data(), Af.data());
    A.apply_adjoint(g.data(), Atg.data());
    double d1 = 0, d2 = 0, nAf = 0, ng = 0;
    for (int i = 0; i < A.rows; ++i) {
      d1 += Af[i] * g[i];
      nAf += Af[i] * Af[i];
      ng += g[i] * g[i];
    }
    for (int j = 0; j < A.cols; ++j) d2 += f[j] * Atg[j];
    CHECK(std::abs(d1 - d2) / (std::sqrt(nAf) * std::sqrt(ng)) <= 1e-12);
  }
}

TEST_CASE("operator linearity to machine precision") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  RngStream rng(3);
  std::vector<double> f1(A.cols), f2(A.cols), fc(A.cols);
  for (int j = 0; j < A.cols; ++j) {
    f1[j] = rng.uniform(-1, 1);
    f2[j] = rng.uniform(-1, 1);
    fc[j] = 0.7 * f1[j] - 1.3 * f2[j];
  }
  std::vector<double> g1(A.rows), g2(A.rows), gc(A.rows);
  A.apply(f1.data(), g1.data());
  A.apply(f2.data(), g2.data());
  A.apply(fc.data(), gc.data());
  double num = 0, den = 0;
  for (int i = 0; i < A.rows; ++i) {
    double want = 0.7 * g1[i] - 1.3 * g2[i];
    num += (gc[i] - want) * (gc[i] - want);
    den += want * want;
  }
  CHECK(std::sqrt(num / den) < 1e-12);
}

TEST_CASE("apply_forward agrees with simulate_wave on random phantoms") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  RngStream rng(11);
  for (int it = 0; it < 5; ++it) {
    Image f({16, 16});
    for (auto& v : f.data) v = rng.uniform(0, 1);
    TensorD g = A.apply(f);
    SensorData s = simulate_wave(f, cfg);
    double num = 0, den = 0;
    for (size_t i = 0; i < g.size(); ++i) {
      num += (g.data[i] - s.samples.data[i]) * (g.data[i] - s.samples.data[i]);
      den += s.samples.data[i] * s.samples.data[i];
    }
    CHECK(std::sqrt(num / den) <= 1e-10);
  }
}

TEST_CASE("shape mismatches are rejected") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  CHECK_THROWS_AS(A.apply(Image({8, 8})), DimensionError);
  CHECK_THROWS_AS(A.apply_adjoint(TensorD({4, 4})), DimensionError);
}

TEST_CASE("noise injection: scale, determinism, zero level") {
  ForwardConfig cfg = small_cfg();
  SensorData g;
  g.samples = TensorD({64, 192});
  g.dt = cfg.dt();
  g.detectors = cfg.detector_positions();
  for (size_t i = 0; i < g.samples.size(); ++i)
    g.samples.data[i] = 2.0 * std::sin(0.01 * (double)i);  // max |g| = 2 up to sampling
  RngStream r0(5);
  SensorData same = add_noise(g, 0.0, r0);
  CHECK(same.samples.data == g.samples.data);

  RngStream r1(5), r2(5);
  SensorData n1 = add_noise(g, 0.01, r1);
  SensorData n2 = add_noise(g, 0.01, r2);
  CHECK(n1.samples.data == n2.samples.data);

  double mean = 0;
  size_t n = g.samples.size();
  std::vector<double> eps(n);
  for (size_t i = 0; i < n; ++i) {
    eps[i] = n1.samples.data[i] - g.samples.data[i];
    mean += eps[i];
  }
  mean /= n;
  double var = 0;
  for (size_t i = 0; i < n; ++i) var += (eps[i] - mean) * (eps[i] - mean);
  double sd = std::sqrt(var / (n - 1));
  double mx = 0;
  for (double v : g.samples.data) mx = std::max(mx, std::abs(v));
  CHECK(sd > 0.01 * mx * 0.98);
  CHECK(sd < 0.01 * mx * 1.02);
}

TEST_CASE("matrix save and load round trips") {
  ForwardConfig cfg = small_cfg();
  ForwardMatrix A = assemble_matrix(cfg);
  auto p = (std::filesystem::temp_directory_path() / "fwd_mat.patt").string();
  save_matrix(p, A);
  ForwardMatrix B = load_matrix(p);
  CHECK(B.fingerprint == A.fingerprint);
  CHECK(B.rows == A.rows);
  CHECK(std::memcmp(B.a.data(), A.a.data(), A.a.size() * 8) == 0);
}

TEST_CASE("gram matrix agrees with explicit transpose products") {
  ForwardConfig cfg = small_cfg();
  cfg.m = 8;
  cfg.n_det = 8;
  cfg.n_t = 24;
  cfg.pad = 6;
  ForwardMatrix A = assemble_matrix(cfg);
  std::vector<float> C = normal_matrix_f32(A);
  RngStream rng(2);
  std::vector<double> f(A.cols), g(A.rows), ataf(A.cols);
  for (auto& v : f) v = rng.uniform(-1, 1);
  A.apply(f.data(), g.data());
  A.apply_adjoint(g.data(), ataf.data());
  for (int i = 0; i < A.cols; ++i) {
    double got = 0;
    for (int j = 0; j < A.cols; ++j) got += (double)C[(size_t)i * A.cols + j] * f[j];
    CHECK(got == doctest::Approx(ataf[i]).epsilon(1e-4));
  }
  // exact symmetry
  for (int i = 0; i < A.cols; ++i)
    for (int j = 0; j < i; ++j)
      CHECK(C[(size_t)i * A.cols + j] == C[(size_t)j * A.cols + i]);
}
