#pragma once

#include "patkit/tensor.hpp"

namespace patkit {

// 20 log10(max(f_true) / rmse); +inf for identical images.
double psnr(const Image& f, const Image& f_true);

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), k1 = 0.01, k2 = 0.03,
// symmetric boundary handling. The dynamic range L comes from f_true, or from
// the joint range of both images when joint_range is set (which makes the
// measure symmetric in its arguments).
double ssim(const Image& f, const Image& f_true, bool joint_range = false);

}  // namespace patkit
