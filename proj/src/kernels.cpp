#include "patkit/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <cstring>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#define PATKIT_AVX512 1
#endif

namespace patkit::kern {

// --- double helpers -----------------------------------------------------------

double ddot(const double* a, const double* b, size_t n) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  double tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

void daxpy(double alpha, const double* x, double* y, size_t n) {
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void dgemv_rows(const double* a, int rows, int cols, const double* f, double* g) {
  for (int t = 0; t < rows; ++t) g[t] = ddot(a + (size_t)t * cols, f, cols);
}

void dgemv_t_rows(const double* a, int rows, int cols, const double* g, double* f) {
  std::memset(f, 0, sizeof(double) * cols);
  for (int t = 0; t < rows; ++t) daxpy(g[t], a + (size_t)t * cols, f, cols);
}

void dgemm_rows(const double* a, int rows, int cols, const double* f, int b, double* g) {
  int b0 = 0;
  for (; b0 + 4 <= b; b0 += 4) {
    const double* f0 = f + (size_t)(b0 + 0) * cols;
    const double* f1 = f + (size_t)(b0 + 1) * cols;
    const double* f2 = f + (size_t)(b0 + 2) * cols;
    const double* f3 = f + (size_t)(b0 + 3) * cols;
    for (int t = 0; t < rows; ++t) {
      const double* ar = a + (size_t)t * cols;
      double s0 = 0, s1 = 0, s2 = 0, s3 = 0;
      for (int j = 0; j < cols; ++j) {
        double v = ar[j];
        s0 += v * f0[j];
        s1 += v * f1[j];
        s2 += v * f2[j];
        s3 += v * f3[j];
      }
      g[(size_t)(b0 + 0) * rows + t] = s0;
      g[(size_t)(b0 + 1) * rows + t] = s1;
      g[(size_t)(b0 + 2) * rows + t] = s2;
      g[(size_t)(b0 + 3) * rows + t] = s3;
    }
  }
  for (; b0 < b; ++b0) dgemv_rows(a, rows, cols, f + (size_t)b0 * cols, g + (size_t)b0 * rows);
}

void dgemm_t_rows(const double* a, int rows, int cols, const double* g, int b, double* f) {
  std::memset(f, 0, sizeof(double) * cols * b);
  int b0 = 0;
  for (; b0 + 4 <= b; b0 += 4) {
    double* f0 = f + (size_t)(b0 + 0) * cols;
    double* f1 = f + (size_t)(b0 + 1) * cols;
    double* f2 = f + (size_t)(b0 + 2) * cols;
    double* f3 = f + (size_t)(b0 + 3) * cols;
    const double* g0 = g + (size_t)(b0 + 0) * rows;
    const double* g1 = g + (size_t)(b0 + 1) * rows;
    const double* g2 = g + (size_t)(b0 + 2) * rows;
    const double* g3 = g + (size_t)(b0 + 3) * rows;
    for (int t = 0; t < rows; ++t) {
      const double* ar = a + (size_t)t * cols;
      double s0 = g0[t], s1 = g1[t], s2 = g2[t], s3 = g3[t];
      for (int j = 0; j < cols; ++j) {
        double v = ar[j];
        f0[j] += s0 * v;
        f1[j] += s1 * v;
        f2[j] += s2 * v;
        f3[j] += s3 * v;
      }
    }
  }
  for (; b0 < b; ++b0) {
    double* fb = f + (size_t)b0 * cols;
    const double* gb = g + (size_t)b0 * rows;
    for (int t = 0; t < rows; ++t) daxpy(gb[t], a + (size_t)t * cols, fb, cols);
  }
}

// --- float helpers --------------------------------------------------------------

float sdot(const float* a, const float* b, size_t n) {
#ifdef PATKIT_AVX512
  __m512 acc = _mm512_setzero_ps();
  size_t i = 0;
  for (; i + 16 <= n; i += 16)
    acc = _mm512_fmadd_ps(_mm512_loadu_ps(a + i), _mm512_loadu_ps(b + i), acc);
  if (i < n) {
    __mmask16 mk = (__mmask16)((1u << (n - i)) - 1);
    acc = _mm512_fmadd_ps(_mm512_maskz_loadu_ps(mk, a + i), _mm512_maskz_loadu_ps(mk, b + i), acc);
  }
  return _mm512_reduce_add_ps(acc);
#else
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  size_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  float tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
#endif
}

void saxpy(float alpha, const float* x, float* y, size_t n) {
#ifdef PATKIT_AVX512
  __m512 av = _mm512_set1_ps(alpha);
  size_t i = 0;
  for (; i + 16 <= n; i += 16)
    _mm512_storeu_ps(y + i, _mm512_fmadd_ps(av, _mm512_loadu_ps(x + i), _mm512_loadu_ps(y + i)));
  if (i < n) {
    __mmask16 mk = (__mmask16)((1u << (n - i)) - 1);
    _mm512_mask_storeu_ps(y + i, mk,
                          _mm512_fmadd_ps(av, _mm512_maskz_loadu_ps(mk, x + i),
                                          _mm512_maskz_loadu_ps(mk, y + i)));
  }
#else
  for (size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
#endif
}

void sgemv_rows(const float* a, int rows, int cols, const float* x, float* y) {
  for (int t = 0; t < rows; ++t) y[t] = sdot(a + (size_t)t * cols, x, cols);
}

void sgemv_t_rows(const float* a, int rows, int cols, const float* g, float* f) {
  std::memset(f, 0, sizeof(float) * cols);
  for (int t = 0; t < rows; ++t) saxpy(g[t], a + (size_t)t * cols, f, cols);
}

void sgemv_batch(const float* a, int rows, int cols, const float* const* xs, int b,
                 float* const* ys) {
#ifdef PATKIT_AVX512
  if (b > 8) b = 8;
  for (int t = 0; t < rows; ++t) {
    const float* ar = a + (size_t)t * cols;
    __m512 acc[8];
    for (int q = 0; q < b; ++q) acc[q] = _mm512_setzero_ps();
    int j = 0;
    for (; j + 16 <= cols; j += 16) {
      __m512 av = _mm512_loadu_ps(ar + j);
      for (int q = 0; q < b; ++q)
        acc[q] = _mm512_fmadd_ps(av, _mm512_loadu_ps(xs[q] + j), acc[q]);
    }
    if (j < cols) {
      __mmask16 mk = (__mmask16)((1u << (cols - j)) - 1);
      __m512 av = _mm512_maskz_loadu_ps(mk, ar + j);
      for (int q = 0; q < b; ++q)
        acc[q] = _mm512_fmadd_ps(av, _mm512_maskz_loadu_ps(mk, xs[q] + j), acc[q]);
    }
    for (int q = 0; q < b; ++q) ys[q][t] = _mm512_reduce_add_ps(acc[q]);
  }
#else
  for (int q = 0; q < b; ++q)
    for (int t = 0; t < rows; ++t) ys[q][t] = sdot(a + (size_t)t * cols, xs[q], cols);
#endif
}

void sgemv_t_batch(const float* a, int rows, int cols, const float* const* gs, int b,
                   float* const* fs) {
  for (int q = 0; q < b; ++q) std::memset(fs[q], 0, sizeof(float) * cols);
  for (int t = 0; t < rows; ++t) {
    const float* ar = a + (size_t)t * cols;
    for (int q = 0; q < b; ++q) saxpy(gs[q][t], ar, fs[q], (size_t)cols);
  }
}

void sgemm_nt(const float* x, int m, int k, const float* y, int n, float* c) {
  const bool sym = (x == y) && (m == n);
  std::memset(c, 0, sizeof(float) * (size_t)m * n);
  const int KC = 1024, NC = 128;
#ifdef PATKIT_AVX512
  for (int k0 = 0; k0 < k; k0 += KC) {
    const int kb = std::min(KC, k - k0);
    for (int j0 = 0; j0 < n; j0 += NC) {
      const int jb = std::min(NC, n - j0);
      for (int i = 0; i < m; i += 4) {
        const int ib = std::min(4, m - i);
        if (sym && j0 + jb <= i) continue;  // strictly below the diagonal block row
        for (int j = j0; j < j0 + jb; j += 4) {
          const int jbq = std::min(4, j0 + jb - j);
          if (sym && j + jbq <= i) continue;
          if (ib == 4 && jbq == 4) {
            __m512 acc[4][4];
            for (int u = 0; u < 4; ++u)
              for (int v = 0; v < 4; ++v) acc[u][v] = _mm512_setzero_ps();
            const float* xr[4];
            const float* yr[4];
            for (int u = 0; u < 4; ++u) xr[u] = x + (size_t)(i + u) * k + k0;
            for (int v = 0; v < 4; ++v) yr[v] = y + (size_t)(j + v) * k + k0;
            int kk = 0;
            for (; kk + 16 <= kb; kk += 16) {
              __m512 xv0 = _mm512_loadu_ps(xr[0] + kk);
              __m512 xv1 = _mm512_loadu_ps(xr[1] + kk);
              __m512 xv2 = _mm512_loadu_ps(xr[2] + kk);
              __m512 xv3 = _mm512_loadu_ps(xr[3] + kk);
              for (int v = 0; v < 4; ++v) {
                __m512 yv = _mm512_loadu_ps(yr[v] + kk);
                acc[0][v] = _mm512_fmadd_ps(xv0, yv, acc[0][v]);
                acc[1][v] = _mm512_fmadd_ps(xv1, yv, acc[1][v]);
                acc[2][v] = _mm512_fmadd_ps(xv2, yv, acc[2][v]);
                acc[3][v] = _mm512_fmadd_ps(xv3, yv, acc[3][v]);
              }
            }
            if (kk < kb) {
              __mmask16 mk = (__mmask16)((1u << (kb - kk)) - 1);
              __m512 xv0 = _mm512_maskz_loadu_ps(mk, xr[0] + kk);
              __m512 xv1 = _mm512_maskz_loadu_ps(mk, xr[1] + kk);
              __m512 xv2 = _mm512_maskz_loadu_ps(mk, xr[2] + kk);
              __m512 xv3 = _mm512_maskz_loadu_ps(mk, xr[3] + kk);
              for (int v = 0; v < 4; ++v) {
                __m512 yv = _mm512_maskz_loadu_ps(mk, yr[v] + kk);
                acc[0][v] = _mm512_fmadd_ps(xv0, yv, acc[0][v]);
                acc[1][v] = _mm512_fmadd_ps(xv1, yv, acc[1][v]);
                acc[2][v] = _mm512_fmadd_ps(xv2, yv, acc[2][v]);
                acc[3][v] = _mm512_fmadd_ps(xv3, yv, acc[3][v]);
              }
            }
            for (int u = 0; u < 4; ++u)
              for (int v = 0; v < 4; ++v)
                c[(size_t)(i + u) * n + (j + v)] += _mm512_reduce_add_ps(acc[u][v]);
          } else {
            for (int u = 0; u < ib; ++u)
              for (int v = 0; v < jbq; ++v)
                c[(size_t)(i + u) * n + (j + v)] +=
                    sdot(x + (size_t)(i + u) * k + k0, y + (size_t)(j + v) * k + k0, kb);
          }
        }
      }
    }
  }
#else
  for (int k0 = 0; k0 < k; k0 += KC) {
    const int kb = std::min(KC, k - k0);
    for (int j0 = 0; j0 < n; j0 += NC) {
      const int jb = std::min(NC, n - j0);
      for (int i = 0; i < m; ++i)
        for (int j = j0; j < j0 + jb; ++j) {
          if (sym && j < i) continue;
          c[(size_t)i * n + j] += sdot(x + (size_t)i * k + k0, y + (size_t)j * k + k0, kb);
        }
    }
  }
#endif
}

// --- conv3x3 --------------------------------------------------------------------

template <typename T>
static void conv3x3_fwd_generic(const T* inp, const T* w, const T* bias, T* out, int ic_n,
                                int oc_n, int h, int wd) {
  const int pw = wd + 2;
  const size_t plane_in = (size_t)(h + 2) * pw;
  const size_t plane_out = (size_t)h * wd;
  for (int oc = 0; oc < oc_n; ++oc) {
    T* op = out + (size_t)oc * plane_out;
    T bv = bias ? bias[oc] : T(0);
    for (size_t i = 0; i < plane_out; ++i) op[i] = bv;
    for (int ic = 0; ic < ic_n; ++ic) {
      const T* wp = w + ((size_t)oc * ic_n + ic) * 9;
      const T* ip = inp + (size_t)ic * plane_in;
      for (int t = 0; t < 9; ++t) {
        const T wv = wp[t];
        const int dy = t / 3, dx = t % 3;
        for (int yy = 0; yy < h; ++yy) {
          const T* src = ip + (size_t)(yy + dy) * pw + dx;
          T* dst = op + (size_t)yy * wd;
          for (int xx = 0; xx < wd; ++xx) dst[xx] += wv * src[xx];
        }
      }
    }
  }
}

#ifdef PATKIT_AVX512
static void conv3x3_fwd_f32(const float* inp, const float* w, const float* bias, float* out,
                            int ic_n, int oc_n, int h, int wd) {
  const int pw = wd + 2;
  const size_t plane_in = (size_t)(h + 2) * pw;
  const size_t plane_out = (size_t)h * wd;
  const size_t wstride = (size_t)ic_n * 9;
  int oc0 = 0;
  for (; oc0 + 4 <= oc_n; oc0 += 4) {
    float* o0 = out + (size_t)(oc0 + 0) * plane_out;
    float* o1 = out + (size_t)(oc0 + 1) * plane_out;
    float* o2 = out + (size_t)(oc0 + 2) * plane_out;
    float* o3 = out + (size_t)(oc0 + 3) * plane_out;
    const __m512 b0 = _mm512_set1_ps(bias ? bias[oc0 + 0] : 0.f);
    const __m512 b1 = _mm512_set1_ps(bias ? bias[oc0 + 1] : 0.f);
    const __m512 b2 = _mm512_set1_ps(bias ? bias[oc0 + 2] : 0.f);
    const __m512 b3 = _mm512_set1_ps(bias ? bias[oc0 + 3] : 0.f);
    for (int y = 0; y < h; ++y) {
      for (int x0 = 0; x0 < wd; x0 += 32) {
        const int rem = wd - x0;
        const int l0 = rem >= 16 ? 16 : rem;
        const int l1 = rem - l0 > 16 ? 16 : (rem - l0 > 0 ? rem - l0 : 0);
        const __mmask16 mk0 = (__mmask16)((l0 >= 16) ? 0xFFFF : ((1u << l0) - 1));
        const __mmask16 mk1 = (__mmask16)((l1 >= 16) ? 0xFFFF : ((1u << l1) - 1));
        __m512 a00 = b0, a01 = b0, a10 = b1, a11 = b1;
        __m512 a20 = b2, a21 = b2, a30 = b3, a31 = b3;
        const float* wq = w + (size_t)oc0 * wstride;
        for (int ic = 0; ic < ic_n; ++ic) {
          const float* base = inp + (size_t)ic * plane_in + (size_t)y * pw + x0;
          const float* wp = wq + (size_t)ic * 9;
          for (int t = 0; t < 9; ++t) {
            const float* src = base + (t / 3) * pw + (t % 3);
            __m512 v0 = _mm512_maskz_loadu_ps(mk0, src);
            __m512 v1 = l1 ? _mm512_maskz_loadu_ps(mk1, src + 16) : _mm512_setzero_ps();
            __m512 w0 = _mm512_set1_ps(wp[t]);
            __m512 w1 = _mm512_set1_ps(wp[wstride + t]);
            __m512 w2 = _mm512_set1_ps(wp[2 * wstride + t]);
            __m512 w3 = _mm512_set1_ps(wp[3 * wstride + t]);
            a00 = _mm512_fmadd_ps(w0, v0, a00);
            a01 = _mm512_fmadd_ps(w0, v1, a01);
            a10 = _mm512_fmadd_ps(w1, v0, a10);
            a11 = _mm512_fmadd_ps(w1, v1, a11);
            a20 = _mm512_fmadd_ps(w2, v0, a20);
            a21 = _mm512_fmadd_ps(w2, v1, a21);
            a30 = _mm512_fmadd_ps(w3, v0, a30);
            a31 = _mm512_fmadd_ps(w3, v1, a31);
          }
        }
        const size_t off = (size_t)y * wd + x0;
        _mm512_mask_storeu_ps(o0 + off, mk0, a00);
        _mm512_mask_storeu_ps(o1 + off, mk0, a10);
        _mm512_mask_storeu_ps(o2 + off, mk0, a20);
        _mm512_mask_storeu_ps(o3 + off, mk0, a30);
        if (l1) {
          _mm512_mask_storeu_ps(o0 + off + 16, mk1, a01);
          _mm512_mask_storeu_ps(o1 + off + 16, mk1, a11);
          _mm512_mask_storeu_ps(o2 + off + 16, mk1, a21);
          _mm512_mask_storeu_ps(o3 + off + 16, mk1, a31);
        }
      }
    }
  }
  for (; oc0 < oc_n; ++oc0) {
    float* o0 = out + (size_t)oc0 * plane_out;
    const __m512 b0 = _mm512_set1_ps(bias ? bias[oc0] : 0.f);
    for (int y = 0; y < h; ++y) {
      for (int x0 = 0; x0 < wd; x0 += 32) {
        const int rem = wd - x0;
        const int l0 = rem >= 16 ? 16 : rem;
        const int l1 = rem - l0 > 16 ? 16 : (rem - l0 > 0 ? rem - l0 : 0);
        const __mmask16 mk0 = (__mmask16)((l0 >= 16) ? 0xFFFF : ((1u << l0) - 1));
        const __mmask16 mk1 = (__mmask16)((l1 >= 16) ? 0xFFFF : ((1u << l1) - 1));
        __m512 a00 = b0, a01 = b0;
        for (int ic = 0; ic < ic_n; ++ic) {
          const float* base = inp + (size_t)ic * plane_in + (size_t)y * pw + x0;
          const float* wp = w + ((size_t)oc0 * ic_n + ic) * 9;
          for (int t = 0; t < 9; ++t) {
            const float* src = base + (t / 3) * pw + (t % 3);
            __m512 wv = _mm512_set1_ps(wp[t]);
            a00 = _mm512_fmadd_ps(wv, _mm512_maskz_loadu_ps(mk0, src), a00);
            if (l1) a01 = _mm512_fmadd_ps(wv, _mm512_maskz_loadu_ps(mk1, src + 16), a01);
          }
        }
        const size_t off = (size_t)y * wd + x0;
        _mm512_mask_storeu_ps(o0 + off, mk0, a00);
        if (l1) _mm512_mask_storeu_ps(o0 + off + 16, mk1, a01);
      }
    }
  }
}
#endif

template <typename T>
void conv3x3_fwd(const T* inp, const T* w, const T* bias, T* out, int ic_n, int oc_n, int h,
                 int wd) {
  conv3x3_fwd_generic(inp, w, bias, out, ic_n, oc_n, h, wd);
}

#ifdef PATKIT_AVX512
template <>
void conv3x3_fwd<float>(const float* inp, const float* w, const float* bias, float* out, int ic_n,
                        int oc_n, int h, int wd) {
  conv3x3_fwd_f32(inp, w, bias, out, ic_n, oc_n, h, wd);
}
#endif

template <typename T>
static void conv3x3_wgrad_generic(const T* inp, const T* dout, T* dw, T* db, int ic_n, int oc_n,
                                  int h, int wd) {
  const int pw = wd + 2;
  const size_t plane_in = (size_t)(h + 2) * pw;
  const size_t plane_out = (size_t)h * wd;
  for (int oc = 0; oc < oc_n; ++oc) {
    const T* dp = dout + (size_t)oc * plane_out;
    if (db) {
      T s = 0;
      for (size_t i = 0; i < plane_out; ++i) s += dp[i];
      db[oc] += s;
    }
    for (int ic = 0; ic < ic_n; ++ic) {
      const T* ip = inp + (size_t)ic * plane_in;
      T* wp = dw + ((size_t)oc * ic_n + ic) * 9;
      for (int t = 0; t < 9; ++t) {
        const int dy = t / 3, dx = t % 3;
        T s = 0;
        for (int yy = 0; yy < h; ++yy) {
          const T* src = ip + (size_t)(yy + dy) * pw + dx;
          const T* dod = dp + (size_t)yy * wd;
          for (int xx = 0; xx < wd; ++xx) s += dod[xx] * src[xx];
        }
        wp[t] += s;
      }
    }
  }
}

#ifdef PATKIT_AVX512
static void conv3x3_wgrad_f32(const float* inp, const float* dout, float* dw, float* db, int ic_n,
                              int oc_n, int h, int wd) {
  const int pw = wd + 2;
  const size_t plane_in = (size_t)(h + 2) * pw;
  const size_t plane_out = (size_t)h * wd;
  for (int oc = 0; oc < oc_n; ++oc) {
    const float* dp = dout + (size_t)oc * plane_out;
    if (db) {
      __m512 acc = _mm512_setzero_ps();
      size_t i = 0;
      for (; i + 16 <= plane_out; i += 16) acc = _mm512_add_ps(acc, _mm512_loadu_ps(dp + i));
      float s = _mm512_reduce_add_ps(acc);
      for (; i < plane_out; ++i) s += dp[i];
      db[oc] += s;
    }
    for (int ic = 0; ic < ic_n; ++ic) {
      const float* ip = inp + (size_t)ic * plane_in;
      __m512 acc[9];
      for (int t = 0; t < 9; ++t) acc[t] = _mm512_setzero_ps();
      for (int y = 0; y < h; ++y) {
        const float* dod = dp + (size_t)y * wd;
        const float* r0 = ip + (size_t)y * pw;
        const float* r1 = r0 + pw;
        const float* r2 = r1 + pw;
        int x = 0;
        for (; x + 16 <= wd; x += 16) {
          __m512 dv = _mm512_loadu_ps(dod + x);
          acc[0] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r0 + x), acc[0]);
          acc[1] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r0 + x + 1), acc[1]);
          acc[2] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r0 + x + 2), acc[2]);
          acc[3] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r1 + x), acc[3]);
          acc[4] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r1 + x + 1), acc[4]);
          acc[5] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r1 + x + 2), acc[5]);
          acc[6] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r2 + x), acc[6]);
          acc[7] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r2 + x + 1), acc[7]);
          acc[8] = _mm512_fmadd_ps(dv, _mm512_loadu_ps(r2 + x + 2), acc[8]);
        }
        if (x < wd) {
          __mmask16 mk = (__mmask16)((1u << (wd - x)) - 1);
          __m512 dv = _mm512_maskz_loadu_ps(mk, dod + x);
          acc[0] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r0 + x), acc[0]);
          acc[1] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r0 + x + 1), acc[1]);
          acc[2] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r0 + x + 2), acc[2]);
          acc[3] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r1 + x), acc[3]);
          acc[4] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r1 + x + 1), acc[4]);
          acc[5] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r1 + x + 2), acc[5]);
          acc[6] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r2 + x), acc[6]);
          acc[7] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r2 + x + 1), acc[7]);
          acc[8] = _mm512_fmadd_ps(dv, _mm512_maskz_loadu_ps(mk, r2 + x + 2), acc[8]);
        }
      }
      float* wp = dw + ((size_t)oc * ic_n + ic) * 9;
      for (int t = 0; t < 9; ++t) wp[t] += _mm512_reduce_add_ps(acc[t]);
    }
  }
}
#endif

template <typename T>
void conv3x3_wgrad(const T* inp, const T* dout, T* dw, T* db, int ic_n, int oc_n, int h, int wd) {
  conv3x3_wgrad_generic(inp, dout, dw, db, ic_n, oc_n, h, wd);
}

#ifdef PATKIT_AVX512
template <>
void conv3x3_wgrad<float>(const float* inp, const float* dout, float* dw, float* db, int ic_n,
                          int oc_n, int h, int wd) {
  conv3x3_wgrad_f32(inp, dout, dw, db, ic_n, oc_n, h, wd);
}
#endif

// --- dense ------------------------------------------------------------------------

template <typename T>
static void dense_fwd_generic(const T* w, const T* bias, const T* const* xs, T* const* ys, int b,
                              int out_n, int in_n) {
  for (int o = 0; o < out_n; ++o) {
    const T* wr = w + (size_t)o * in_n;
    for (int q = 0; q < b; ++q) {
      T s = bias ? bias[o] : T(0);
      const T* x = xs[q];
      for (int i = 0; i < in_n; ++i) s += wr[i] * x[i];
      ys[q][o] = s;
    }
  }
}

#ifdef PATKIT_AVX512
static void dense_fwd_f32(const float* w, const float* bias, const float* const* xs,
                          float* const* ys, int b, int out_n, int in_n) {
  for (int o = 0; o < out_n; ++o) {
    const float* wr = w + (size_t)o * in_n;
    __m512 acc[8];
    const int nb = b > 8 ? 8 : b;
    for (int q = 0; q < nb; ++q) acc[q] = _mm512_setzero_ps();
    int i = 0;
    for (; i + 16 <= in_n; i += 16) {
      __m512 wv = _mm512_loadu_ps(wr + i);
      for (int q = 0; q < nb; ++q)
        acc[q] = _mm512_fmadd_ps(wv, _mm512_loadu_ps(xs[q] + i), acc[q]);
    }
    if (i < in_n) {
      __mmask16 mk = (__mmask16)((1u << (in_n - i)) - 1);
      __m512 wv = _mm512_maskz_loadu_ps(mk, wr + i);
      for (int q = 0; q < nb; ++q)
        acc[q] = _mm512_fmadd_ps(wv, _mm512_maskz_loadu_ps(mk, xs[q] + i), acc[q]);
    }
    const float bv = bias ? bias[o] : 0.f;
    for (int q = 0; q < nb; ++q) ys[q][o] = bv + _mm512_reduce_add_ps(acc[q]);
    for (int q = 8; q < b; ++q) {
      float s = bv;
      const float* x = xs[q];
      for (int j = 0; j < in_n; ++j) s += wr[j] * x[j];
      ys[q][o] = s;
    }
  }
}
#endif

template <typename T>
void dense_fwd(const T* w, const T* bias, const T* const* xs, T* const* ys, int b, int out_n,
               int in_n) {
  dense_fwd_generic(w, bias, xs, ys, b, out_n, in_n);
}

#ifdef PATKIT_AVX512
template <>
void dense_fwd<float>(const float* w, const float* bias, const float* const* xs, float* const* ys,
                      int b, int out_n, int in_n) {
  dense_fwd_f32(w, bias, xs, ys, b, out_n, in_n);
}
#endif

template <typename T>
void dense_wgrad(const T* const* xs, const T* const* dys, T* dw, T* db, int b, int out_n,
                 int in_n) {
  for (int o = 0; o < out_n; ++o) {
    T* wr = dw + (size_t)o * in_n;
    T bsum = 0;
    for (int q = 0; q < b; ++q) bsum += dys[q][o];
    if (db) db[o] += bsum;
    for (int q = 0; q < b; ++q) {
      if constexpr (std::is_same_v<T, float>) {
        saxpy(dys[q][o], xs[q], wr, (size_t)in_n);
      } else {
        const T s = dys[q][o];
        const T* x = xs[q];
        for (int i = 0; i < in_n; ++i) wr[i] += s * x[i];
      }
    }
  }
}

template <typename T>
void dense_xgrad(const T* w, const T* const* dys, T* const* dxs, int b, int out_n, int in_n) {
  for (int q = 0; q < b; ++q) std::memset(dxs[q], 0, sizeof(T) * in_n);
  for (int o = 0; o < out_n; ++o) {
    const T* wr = w + (size_t)o * in_n;
    for (int q = 0; q < b; ++q) {
      if constexpr (std::is_same_v<T, float>) {
        saxpy(dys[q][o], wr, dxs[q], (size_t)in_n);
      } else {
        const T s = dys[q][o];
        T* dx = dxs[q];
        for (int i = 0; i < in_n; ++i) dx[i] += s * wr[i];
      }
    }
  }
}

// --- Adam ---------------------------------------------------------------------------

template <typename T>
static void adam_generic(T* p, const T* g, T* m, T* v, size_t n, double lr, double b1, double b2,
                         double eps, long t, double l1) {
  const double c1 = 1.0 / (1.0 - std::pow(b1, (double)t));
  const double c2 = 1.0 / (1.0 - std::pow(b2, (double)t));
  for (size_t i = 0; i < n; ++i) {
    double gi = (double)g[i];
    if (l1 != 0.0) gi += l1 * (p[i] > T(0) ? 1.0 : (p[i] < T(0) ? -1.0 : 0.0));
    double mi = b1 * (double)m[i] + (1.0 - b1) * gi;
    double vi = b2 * (double)v[i] + (1.0 - b2) * gi * gi;
    m[i] = (T)mi;
    v[i] = (T)vi;
    p[i] = (T)((double)p[i] - lr * (mi * c1) / (std::sqrt(vi * c2) + eps));
  }
}

#ifdef PATKIT_AVX512
static void adam_f32(float* p, const float* g, float* m, float* v, size_t n, double lr, double b1,
                     double b2, double eps, long t, double l1) {
  const float c1 = (float)(1.0 / (1.0 - std::pow(b1, (double)t)));
  const float c2 = (float)(1.0 / (1.0 - std::pow(b2, (double)t)));
  const __m512 vb1 = _mm512_set1_ps((float)b1), vb1c = _mm512_set1_ps((float)(1 - b1));
  const __m512 vb2 = _mm512_set1_ps((float)b2), vb2c = _mm512_set1_ps((float)(1 - b2));
  const __m512 vlr = _mm512_set1_ps((float)lr), veps = _mm512_set1_ps((float)eps);
  const __m512 vc1 = _mm512_set1_ps(c1), vc2 = _mm512_set1_ps(c2);
  const __m512 vl1 = _mm512_set1_ps((float)l1);
  const __m512 zero = _mm512_setzero_ps();
  size_t i = 0;
  for (; i < n; i += 16) {
    __mmask16 mk = (n - i >= 16) ? (__mmask16)0xFFFF : (__mmask16)((1u << (n - i)) - 1);
    __m512 pv = _mm512_maskz_loadu_ps(mk, p + i);
    __m512 gv = _mm512_maskz_loadu_ps(mk, g + i);
    if (l1 != 0.0) {
      __mmask16 pos = _mm512_cmp_ps_mask(pv, zero, _CMP_GT_OQ);
      __mmask16 neg = _mm512_cmp_ps_mask(pv, zero, _CMP_LT_OQ);
      gv = _mm512_mask_add_ps(gv, pos, gv, vl1);
      gv = _mm512_mask_sub_ps(gv, neg, gv, vl1);
    }
    __m512 mv = _mm512_maskz_loadu_ps(mk, m + i);
    __m512 vv = _mm512_maskz_loadu_ps(mk, v + i);
    mv = _mm512_fmadd_ps(vb1, mv, _mm512_mul_ps(vb1c, gv));
    vv = _mm512_fmadd_ps(vb2, vv, _mm512_mul_ps(vb2c, _mm512_mul_ps(gv, gv)));
    __m512 mhat = _mm512_mul_ps(mv, vc1);
    __m512 denom = _mm512_add_ps(_mm512_sqrt_ps(_mm512_mul_ps(vv, vc2)), veps);
    pv = _mm512_sub_ps(pv, _mm512_mul_ps(vlr, _mm512_div_ps(mhat, denom)));
    _mm512_mask_storeu_ps(m + i, mk, mv);
    _mm512_mask_storeu_ps(v + i, mk, vv);
    _mm512_mask_storeu_ps(p + i, mk, pv);
  }
}
#endif

template <typename T>
void adam_update(T* p, const T* g, T* m, T* v, size_t n, double lr, double b1, double b2,
                 double eps, long t, double l1) {
  adam_generic(p, g, m, v, n, lr, b1, b2, eps, t, l1);
}

#ifdef PATKIT_AVX512
template <>
void adam_update<float>(float* p, const float* g, float* m, float* v, size_t n, double lr,
                        double b1, double b2, double eps, long t, double l1) {
  adam_f32(p, g, m, v, n, lr, b1, b2, eps, t, l1);
}
#endif

template <typename T>
double l1_norm(const T* p, size_t n) {
  double acc[4] = {0, 0, 0, 0};
  size_t i = 0;
  for (; i + 4 <= n; i += 4)
    for (int l = 0; l < 4; ++l) acc[l] += std::abs((double)p[i + l]);
  double s = 0;
  for (; i < n; ++i) s += std::abs((double)p[i]);
  return (acc[0] + acc[1]) + (acc[2] + acc[3]) + s;
}

// explicit instantiations
template void conv3x3_fwd<double>(const double*, const double*, const double*, double*, int, int,
                                  int, int);
template void conv3x3_wgrad<double>(const double*, const double*, double*, double*, int, int, int,
                                    int);
#ifndef PATKIT_AVX512
template void conv3x3_fwd<float>(const float*, const float*, const float*, float*, int, int, int,
                                 int);
template void conv3x3_wgrad<float>(const float*, const float*, float*, float*, int, int, int, int);
template void dense_fwd<float>(const float*, const float*, const float* const*, float* const*, int,
                               int, int);
template void adam_update<float>(float*, const float*, float*, float*, size_t, double, double,
                                 double, double, long, double);
#endif
template void dense_fwd<double>(const double*, const double*, const double* const*,
                                double* const*, int, int, int);
template void dense_wgrad<float>(const float* const*, const float* const*, float*, float*, int,
                                 int, int);
template void dense_wgrad<double>(const double* const*, const double* const*, double*, double*,
                                  int, int, int);
template void dense_xgrad<float>(const float*, const float* const*, float* const*, int, int, int);
template void dense_xgrad<double>(const double*, const double* const*, double* const*, int, int,
                                  int);
template void adam_update<double>(double*, const double*, double*, double*, size_t, double, double,
                                  double, double, long, double);
template double l1_norm<float>(const float*, size_t);
template double l1_norm<double>(const double*, size_t);

bool finite_scan(const float* p, size_t n) {
#ifdef PATKIT_AVX512
  const __m512 inf = _mm512_set1_ps(std::numeric_limits<float>::infinity());
  const __m512 signmask = _mm512_castsi512_ps(_mm512_set1_epi32(0x7FFFFFFF));
  size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    __m512 v = _mm512_loadu_ps(p + i);
    __mmask16 bad = _mm512_cmp_ps_mask(v, v, _CMP_UNORD_Q) |
                    _mm512_cmp_ps_mask(_mm512_and_ps(v, signmask), inf, _CMP_EQ_OQ);
    if (bad) return false;
  }
  for (; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, p + i, 4);
    if (((u >> 23) & 0xFFu) == 0xFFu) return false;
  }
  return true;
#else
  for (size_t i = 0; i < n; ++i) {
    uint32_t u;
    std::memcpy(&u, p + i, 4);
    if (((u >> 23) & 0xFFu) == 0xFFu) return false;
  }
  return true;
#endif
}

bool finite_scan(const double* p, size_t n) {
#ifdef PATKIT_AVX512
  const __m512d inf = _mm512_set1_pd(std::numeric_limits<double>::infinity());
  const __m512d signmask = _mm512_castsi512_pd(_mm512_set1_epi64(0x7FFFFFFFFFFFFFFFll));
  size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    __m512d v = _mm512_loadu_pd(p + i);
    __mmask8 bad = _mm512_cmp_pd_mask(v, v, _CMP_UNORD_Q) |
                   _mm512_cmp_pd_mask(_mm512_and_pd(v, signmask), inf, _CMP_EQ_OQ);
    if (bad) return false;
  }
  for (; i < n; ++i) {
    uint64_t u;
    std::memcpy(&u, p + i, 8);
    if (((u >> 52) & 0x7FFull) == 0x7FFull) return false;
  }
  return true;
#else
  for (size_t i = 0; i < n; ++i) {
    uint64_t u;
    std::memcpy(&u, p + i, 8);
    if (((u >> 52) & 0x7FFull) == 0x7FFull) return false;
  }
  return true;
#endif
}

}  // namespace patkit::kern
