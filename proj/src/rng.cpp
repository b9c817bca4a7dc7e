#include "patkit/rng.hpp"

#include <cmath>

namespace patkit {

void RngStream::normal_pair(double& z0, double& z1) {
  // u1 pushed away from 0 so log stays finite
  double u1 = ((double)(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = (double)(next_u64() >> 11) * 0x1.0p-53;
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 6.283185307179586476925286766559 * u2;
  z0 = r * std::cos(a);
  z1 = r * std::sin(a);
}

std::vector<double> RngStream::normal_draws(size_t n, double sigma) {
  std::vector<double> out(n, 0.0);
  if (sigma == 0.0) {
    // keep the counter advance identical to the sampled case
    counter += 2 * ((n + 1) / 2);
    return out;
  }
  for (size_t i = 0; i + 1 < n; i += 2) {
    double a, b;
    normal_pair(a, b);
    out[i] = sigma * a;
    out[i + 1] = sigma * b;
  }
  if (n % 2) {
    double a, b;
    normal_pair(a, b);
    out[n - 1] = sigma * a;
  }
  return out;
}

}  // namespace patkit
