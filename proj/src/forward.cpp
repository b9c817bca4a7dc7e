#include "patkit/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <sstream>

#include "patkit/kernels.hpp"

namespace patkit {

void ForwardConfig::validate() const {
  if (m < 4) throw ConfigError("grid side m must be >= 4");
  if (c <= 0) throw ConfigError("sound speed must be positive");
  if (cfl <= 0 || cfl > 0.7071067811865476) throw ConfigError("cfl must be in (0, 1/sqrt(2)]");
  if (pad < 0) throw ConfigError("pad must be >= 0");
  if (sponge_strength < 0 || sponge_strength > 5) throw ConfigError("sponge strength in [0, 5]");
  if (n_t < 2) throw ConfigError("n_t must be >= 2");
  if (n_t * dt() < std::sqrt(2.0) * m / c)
    throw ConfigError("n_t too small: recording must cover the diagonal travel time");
  if (layout == DetectorLayout::top_line) {
    if (n_det < 1 || n_det > m || m % n_det != 0)
      throw ConfigError("top-line detectors must evenly divide the top row");
  } else {
    if (n_det != 4 * (m - 1)) throw ConfigError("ring layout requires n_det == 4*(m-1)");
  }
}

std::vector<std::pair<int, int>> ForwardConfig::detector_positions() const {
  std::vector<std::pair<int, int>> pos;
  pos.reserve(n_det);
  if (layout == DetectorLayout::top_line) {
    int stride = m / n_det;
    for (int k = 0; k < n_det; ++k) pos.emplace_back(0, k * stride);
  } else {
    // perimeter, clockwise from the top-left corner
    for (int cc = 0; cc < m - 1; ++cc) pos.emplace_back(0, cc);
    for (int rr = 0; rr < m - 1; ++rr) pos.emplace_back(rr, m - 1);
    for (int cc = m - 1; cc > 0; --cc) pos.emplace_back(m - 1, cc);
    for (int rr = m - 1; rr > 0; --rr) pos.emplace_back(rr, 0);
  }
  return pos;
}

std::vector<std::pair<double, double>> ForwardConfig::detector_normals() const {
  std::vector<std::pair<double, double>> nrm;
  auto pos = detector_positions();
  nrm.reserve(pos.size());
  for (auto [r, c_] : pos) {
    double nr = 0, nc = 0;
    if (r == 0) nr += 1;
    if (r == m - 1) nr -= 1;
    if (c_ == 0) nc += 1;
    if (c_ == m - 1) nc -= 1;
    double len = std::sqrt(nr * nr + nc * nc);
    nrm.emplace_back(nr / len, nc / len);
  }
  return nrm;
}

std::string ForwardConfig::serialize() const {
  std::ostringstream os;
  os << "m = " << m << "\n";
  os << "c = " << format_g17(c) << "\n";
  os << "cfl = " << format_g17(cfl) << "\n";
  os << "n_det = " << n_det << "\n";
  os << "n_t = " << n_t << "\n";
  os << "pad = " << pad << "\n";
  os << "sponge_strength = " << format_g17(sponge_strength) << "\n";
  os << "layout = " << (layout == DetectorLayout::top_line ? "top_line" : "ring") << "\n";
  os << "matrix_cap_bytes = " << matrix_cap_bytes << "\n";
  return os.str();
}

ForwardConfig ForwardConfig::parse(const std::string& text) {
  ForwardConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto trim = [](std::string& s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      s = a == std::string::npos ? "" : s.substr(a, b - a + 1);
    };
    trim(key);
    trim(val);
    if (key == "m") cfg.m = std::stoi(val);
    else if (key == "c") cfg.c = std::stod(val);
    else if (key == "cfl") cfg.cfl = std::stod(val);
    else if (key == "n_det") cfg.n_det = std::stoi(val);
    else if (key == "n_t") cfg.n_t = std::stoi(val);
    else if (key == "pad") cfg.pad = std::stoi(val);
    else if (key == "sponge_strength") cfg.sponge_strength = std::stod(val);
    else if (key == "layout") cfg.layout = val == "ring" ? DetectorLayout::ring : DetectorLayout::top_line;
    else if (key == "matrix_cap_bytes") cfg.matrix_cap_bytes = std::stoull(val);
    else throw FormatError("unknown config key: " + key);
  }
  return cfg;
}

uint64_t ForwardConfig::fingerprint() const {
  // the cap is an assembly-time guard, not part of the geometry
  ForwardConfig g = *this;
  g.matrix_cap_bytes = 0;
  return fnv1a64(g.serialize());
}

// --- wave stepper -------------------------------------------------------------

namespace wave {

Stepper::Stepper(const ForwardConfig& cfg, bool with_sponge) {
  cfg.validate();
  m = cfg.m;
  pad = cfg.pad;
  n = m + 2 * pad;
  lam2 = cfg.cfl * cfg.cfl;
  p.assign((size_t)n * n, 0.0);
  p_prev.assign((size_t)n * n, 0.0);
  p_next.assign((size_t)n * n, 0.0);
  // Convolutional absorbing layer: sigma ramps quadratically across the pad,
  // reaching sponge_strength per step at the outer edge. Recursion
  // coefficients are tabulated per axis at integer and half nodes.
  const double smax = with_sponge && pad > 0 ? cfg.sponge_strength : 0.0;
  auto sigma_dt = [&](double x) {
    double d = std::max(pad - x, x - (pad + m - 1)) / (double)pad;
    if (d <= 0 || smax <= 0) return 0.0;
    if (d > 1) d = 1;
    return smax * d * d;
  };
  bi.resize(n);
  ai.resize(n);
  bh.resize(n);
  ah.resize(n);
  bool any = false;
  for (int i = 0; i < n; ++i) {
    double s = sigma_dt(i);
    bi[i] = std::exp(-s);
    ai[i] = s > 0 ? bi[i] - 1.0 : 0.0;
    double sh = sigma_dt(i + 0.5);
    bh[i] = std::exp(-sh);
    ah[i] = sh > 0 ? bh[i] - 1.0 : 0.0;
    if (s > 0 || sh > 0) any = true;
  }
  pml = any;
  if (pml) {
    psix.assign((size_t)n * n, 0.0);
    psiy.assign((size_t)n * n, 0.0);
    zetax.assign((size_t)n * n, 0.0);
    zetay.assign((size_t)n * n, 0.0);
  }
  etax.assign((size_t)n * n, 0.0);
  etay.assign((size_t)n * n, 0.0);
}

double& Stepper::at(int row, int col) { return p[(size_t)(row + pad) * n + (col + pad)]; }

void Stepper::load_initial(const Image& f) {
  if (f.ndim() != 2 || f.shape[0] != m || f.shape[1] != m)
    throw DimensionError("initial pressure must be m x m");
  std::fill(p.begin(), p.end(), 0.0);
  std::fill(p_prev.begin(), p_prev.end(), 0.0);
  for (int r = 0; r < m; ++r)
    std::memcpy(&p[(size_t)(r + pad) * n + pad], &f.data[(size_t)r * m], m * sizeof(double));
}

void Stepper::step(bool first) {
  const int nn = n;
  const double l2 = lam2;
  // differences at half nodes, with the recursive-convolution correction
  for (int i = 0; i < nn; ++i) {
    const double* pr = &p[(size_t)i * nn];
    double* ex = &etax[(size_t)i * nn];
    if (pml) {
      double* px = &psix[(size_t)i * nn];
      for (int j = 0; j < nn - 1; ++j) {
        double g = pr[j + 1] - pr[j];
        if (ah[j] != 0.0) {
          px[j] = bh[j] * px[j] + ah[j] * g;
          g += px[j];
        }
        ex[j] = g;
      }
    } else {
      for (int j = 0; j < nn - 1; ++j) ex[j] = pr[j + 1] - pr[j];
    }
  }
  for (int i = 0; i < nn - 1; ++i) {
    const double* pr = &p[(size_t)i * nn];
    const double* pd = pr + nn;
    double* ey = &etay[(size_t)i * nn];
    if (pml && ah[i] != 0.0) {
      double* py = &psiy[(size_t)i * nn];
      for (int j = 0; j < nn; ++j) {
        double g = pd[j] - pr[j];
        py[j] = bh[i] * py[j] + ah[i] * g;
        ey[j] = g + py[j];
      }
    } else {
      for (int j = 0; j < nn; ++j) ey[j] = pd[j] - pr[j];
    }
  }
  for (int i = 1; i < nn - 1; ++i) {
    const double* pr = &p[(size_t)i * nn];
    const double* po = &p_prev[(size_t)i * nn];
    const double* ex = &etax[(size_t)i * nn];
    const double* eyu = &etay[(size_t)(i - 1) * nn];
    const double* eyd = &etay[(size_t)i * nn];
    double* out = &p_next[(size_t)i * nn];
    double* zx = pml ? &zetax[(size_t)i * nn] : nullptr;
    double* zy = pml ? &zetay[(size_t)i * nn] : nullptr;
    const bool row_pml = pml && ai[i] != 0.0;
    for (int j = 1; j < nn - 1; ++j) {
      double hx = ex[j] - ex[j - 1];
      double hy = eyd[j] - eyu[j];
      if (pml) {
        if (ai[j] != 0.0) {
          zx[j] = bi[j] * zx[j] + ai[j] * hx;
          hx += zx[j];
        }
        if (row_pml) {
          zy[j] = bi[i] * zy[j] + ai[i] * hy;
          hy += zy[j];
        }
      }
      double lap = l2 * (hx + hy);
      out[j] = first ? pr[j] + 0.5 * lap : 2.0 * pr[j] - po[j] + lap;
    }
  }
  for (int j = 0; j < nn; ++j) {
    p_next[j] = 0.0;
    p_next[(size_t)(nn - 1) * nn + j] = 0.0;
  }
  for (int i = 0; i < nn; ++i) {
    p_next[(size_t)i * nn] = 0.0;
    p_next[(size_t)i * nn + nn - 1] = 0.0;
  }
  std::swap(p_prev, p);
  std::swap(p, p_next);
}

Image Stepper::crop() const {
  Image out({m, m});
  for (int r = 0; r < m; ++r)
    std::memcpy(&out.data[(size_t)r * m], &p[(size_t)(r + pad) * n + pad], m * sizeof(double));
  return out;
}

double Stepper::discrete_energy() const {
  // E = 1/2 |(p - p_prev)/dt'|^2 + 1/2 a(p, p_prev), with the bilinear form of
  // the 5-point Laplacian; exactly conserved by the undamped scheme.
  // Expressed in units where dt' = sqrt(lam2), h = 1.
  double kin = 0, pot = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      size_t k = (size_t)i * n + j;
      double d = p[k] - p_prev[k];
      kin += d * d;
      if (i + 1 < n) {
        double ga = p[(size_t)(i + 1) * n + j] - p[k];
        double gb = p_prev[(size_t)(i + 1) * n + j] - p_prev[k];
        pot += ga * gb;
      }
      if (j + 1 < n) {
        double ga = p[k + 1] - p[k];
        double gb = p_prev[k + 1] - p_prev[k];
        pot += ga * gb;
      }
    }
  }
  return 0.5 * kin / lam2 + 0.5 * pot;
}

}  // namespace wave

SensorData simulate_wave(const Image& f, const ForwardConfig& cfg) {
  cfg.validate();
  if (!f.finite()) throw NumericError("initial pressure not finite");
  wave::Stepper sim(cfg);
  sim.load_initial(f);
  auto det = cfg.detector_positions();
  SensorData out;
  out.samples = TensorD({cfg.n_det, cfg.n_t});
  out.dt = cfg.dt();
  out.detectors = det;
  const int n = sim.n;
  std::vector<size_t> det_idx(det.size());
  for (size_t d = 0; d < det.size(); ++d)
    det_idx[d] = (size_t)(det[d].first + cfg.pad) * n + (det[d].second + cfg.pad);
  for (int s = 0; s < cfg.n_t; ++s) {
    if (s > 0) {
      sim.step(s == 1);
      if (s % 64 == 0 && !all_finite(sim.p.data(), sim.p.size()))
        throw NumericError("field blew up at step " + std::to_string(s));
    }
    for (size_t d = 0; d < det_idx.size(); ++d) out.samples.data[d * cfg.n_t + s] = sim.p[det_idx[d]];
  }
  if (!out.samples.finite()) throw NumericError("non-finite sensor data");
  return out;
}

// --- matrix -------------------------------------------------------------------

const std::vector<float>& ForwardMatrix::f32() const {
  if (a32.empty()) {
    a32.resize(a.size());
    for (size_t i = 0; i < a.size(); ++i) a32[i] = (float)a[i];
  }
  return a32;
}

void ForwardMatrix::apply(const double* f, double* g) const {
  kern::dgemv_rows(a.data(), rows, cols, f, g);
}

void ForwardMatrix::apply_adjoint(const double* g, double* f) const {
  kern::dgemv_t_rows(a.data(), rows, cols, g, f);
}

TensorD ForwardMatrix::apply(const Image& f) const {
  if ((int)f.size() != cols) throw DimensionError("image size does not match matrix columns");
  TensorD g({cfg.n_det, cfg.n_t});
  apply(f.ptr(), g.ptr());
  return g;
}

Image ForwardMatrix::apply_adjoint(const TensorD& g) const {
  if ((int)g.size() != rows) throw DimensionError("data size does not match matrix rows");
  Image f({cfg.m, cfg.m});
  apply_adjoint(g.ptr(), f.ptr());
  return f;
}

void ForwardMatrix::apply_batch(const double* f, int b, double* g) const {
  kern::dgemm_rows(a.data(), rows, cols, f, b, g);
}

void ForwardMatrix::apply_adjoint_batch(const double* g, int b, double* f) const {
  kern::dgemm_t_rows(a.data(), rows, cols, g, b, f);
}

SensorData ForwardMatrix::wrap(TensorD samples) const {
  SensorData s;
  s.samples = std::move(samples);
  s.dt = cfg.dt();
  s.detectors = cfg.detector_positions();
  return s;
}

ForwardMatrix assemble_matrix(const ForwardConfig& cfg) {
  cfg.validate();
  const size_t T = (size_t)cfg.n_det * cfg.n_t;
  const size_t M = (size_t)cfg.m * cfg.m;
  const size_t bytes = T * M * sizeof(double);
  if (bytes > cfg.matrix_cap_bytes)
    throw SizeError("matrix would need " + std::to_string(bytes) + " bytes, cap is " +
                    std::to_string(cfg.matrix_cap_bytes));
  ForwardMatrix A;
  A.rows = (int)T;
  A.cols = (int)M;
  A.cfg = cfg;
  A.fingerprint = cfg.fingerprint();
  A.a.assign(T * M, 0.0);
  double* a = A.a.data();
  parallel_for(M, [&](size_t j) {
    Image e({cfg.m, cfg.m});
    e.data[j] = 1.0;
    SensorData g = simulate_wave(e, cfg);
    for (size_t t = 0; t < T; ++t) a[t * M + j] = g.samples.data[t];
  });
  return A;
}

void save_matrix(const std::string& path, const ForwardMatrix& A) {
  TensorD t({A.rows, A.cols}, A.a);
  write_tensor(path, t);
  std::FILE* f = std::fopen((path + ".cfg").c_str(), "wb");
  if (!f) throw IoError("cannot write " + path + ".cfg");
  std::string s = A.cfg.serialize();
  std::fwrite(s.data(), 1, s.size(), f);
  std::fclose(f);
}

ForwardMatrix load_matrix(const std::string& path) {
  AnyTensor t = read_tensor(path);
  if (t.dtype != Dtype::f64) throw FormatError("matrix file must be f64");
  std::FILE* f = std::fopen((path + ".cfg").c_str(), "rb");
  if (!f) throw IoError("missing sidecar " + path + ".cfg");
  std::string text;
  char buf[512];
  size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, got);
  std::fclose(f);
  ForwardMatrix A;
  A.cfg = ForwardConfig::parse(text);
  A.cfg.validate();
  A.rows = t.f64.shape[0];
  A.cols = t.f64.shape[1];
  if (A.rows != A.cfg.n_det * A.cfg.n_t || A.cols != A.cfg.m * A.cfg.m)
    throw DimensionError("matrix shape does not match its sidecar config");
  A.a = std::move(t.f64.data);
  A.fingerprint = A.cfg.fingerprint();
  return A;
}

SensorData add_noise(const SensorData& g, double level, RngStream& rng) {
  if (level < 0) throw ConfigError("noise level must be >= 0");
  double mx = 0;
  for (double v : g.samples.data) mx = std::max(mx, std::abs(v));
  SensorData out = g;
  if (level == 0 || mx == 0) return out;
  auto eps = rng.normal_draws(g.samples.size(), level * mx);
  for (size_t i = 0; i < out.samples.size(); ++i) out.samples.data[i] += eps[i];
  return out;
}

std::vector<float> normal_matrix_f32(const ForwardMatrix& A) {
  const auto& af = A.f32();
  // transpose once so both tile operands stream contiguously
  std::vector<float> at((size_t)A.cols * A.rows);
  for (int t = 0; t < A.rows; ++t)
    for (int j = 0; j < A.cols; ++j) at[(size_t)j * A.rows + t] = af[(size_t)t * A.cols + j];
  std::vector<float> c((size_t)A.cols * A.cols);
  kern::sgemm_nt(at.data(), A.cols, A.rows, at.data(), A.cols, c.data());
  // exact symmetry
  for (int i = 0; i < A.cols; ++i)
    for (int j = 0; j < i; ++j) c[(size_t)i * A.cols + j] = c[(size_t)j * A.cols + i];
  return c;
}

double op_norm_estimate(const ForwardMatrix& A, int iters, uint64_t seed) {
  RngStream rng(seed);
  std::vector<double> v(A.cols), g(A.rows), w(A.cols);
  for (auto& x : v) x = rng.uniform(-1, 1);
  double lam = 0;
  for (int it = 0; it < iters; ++it) {
    A.apply(v.data(), g.data());
    A.apply_adjoint(g.data(), w.data());
    double nrm = 0;
    for (double x : w) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm == 0) return 0;
    for (int i = 0; i < A.cols; ++i) v[i] = w[i] / nrm;
    lam = nrm;
  }
  return std::sqrt(lam);  // ||A|| = sqrt(lambda_max(A^T A))
}

}  // namespace patkit
