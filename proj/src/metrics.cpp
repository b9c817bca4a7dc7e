#include "patkit/metrics.hpp"

#include <cmath>
#include <limits>

namespace patkit {

double psnr(const Image& f, const Image& f_true) {
  if (f.shape != f_true.shape) throw DimensionError("psnr operands disagree");
  double mx = f_true.data[0], mse = 0;
  for (size_t i = 0; i < f.size(); ++i) {
    mx = std::max(mx, f_true.data[i]);
    double d = f.data[i] - f_true.data[i];
    mse += d * d;
  }
  mse /= (double)f.size();
  if (mse == 0) return std::numeric_limits<double>::infinity();
  return 20.0 * std::log10(mx / std::sqrt(mse));
}

namespace {

// reflect-101 style symmetric indexing
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - 1 - i;
  }
  return i;
}

}  // namespace

double ssim(const Image& f, const Image& f_true, bool joint_range) {
  if (f.shape != f_true.shape) throw DimensionError("ssim operands disagree");
  const int h = f.shape[0], w = f.shape[1];
  double lo = f_true.data[0], hi = f_true.data[0];
  for (double v : f_true.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (joint_range) {
    for (double v : f.data) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  const double L = hi - lo;
  if (L == 0) {
    if (f.data == f_true.data) return 1.0;
    throw NumericError("ssim undefined: reference has zero dynamic range");
  }
  const double c1 = (0.01 * L) * (0.01 * L);
  const double c2 = (0.03 * L) * (0.03 * L);

  constexpr int R = 5;  // 11x11 window
  double wgt[2 * R + 1];
  double sum = 0;
  for (int i = -R; i <= R; ++i) {
    wgt[i + R] = std::exp(-(double)(i * i) / (2.0 * 1.5 * 1.5));
    sum += wgt[i + R];
  }
  for (double& v : wgt) v /= sum;

  double acc = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double mu_a = 0, mu_b = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -R; dy <= R; ++dy) {
        const int yy = reflect(y + dy, h);
        const double wy = wgt[dy + R];
        for (int dx = -R; dx <= R; ++dx) {
          const int xx = reflect(x + dx, w);
          const double ww = wy * wgt[dx + R];
          const double a = f.data[(size_t)yy * w + xx];
          const double b = f_true.data[(size_t)yy * w + xx];
          mu_a += ww * a;
          mu_b += ww * b;
          saa += ww * a * a;
          sbb += ww * b * b;
          sab += ww * a * b;
        }
      }
      const double va = saa - mu_a * mu_a;
      const double vb = sbb - mu_b * mu_b;
      const double cov = sab - mu_a * mu_b;
      acc += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
             ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
    }
  }
  return acc / ((double)h * w);
}

}  // namespace patkit
