#pragma once

#include <cstddef>

// Low-level numeric kernels. Single-precision hot paths carry AVX-512
// implementations with scalar fallbacks; all variants accumulate in a fixed
// order so results are bit-reproducible.

namespace patkit::kern {

// --- double precision, dense operator products -------------------------------

double ddot(const double* a, const double* b, size_t n);
void daxpy(double alpha, const double* x, double* y, size_t n);

// g[t] = dot(A_row_t, f)
void dgemv_rows(const double* a, int rows, int cols, const double* f, double* g);
// f[j] = sum_t A[t][j] g[t]
void dgemv_t_rows(const double* a, int rows, int cols, const double* g, double* f);
// column-major batches: f is cols x b (each column contiguous), g is rows x b
void dgemm_rows(const double* a, int rows, int cols, const double* f, int b, double* g);
void dgemm_t_rows(const double* a, int rows, int cols, const double* g, int b, double* f);

// --- single precision ---------------------------------------------------------

float sdot(const float* a, const float* b, size_t n);
void saxpy(float alpha, const float* x, float* y, size_t n);

// C = X * Y^T for X: m x k, Y: n x k (row-major). Cache-blocked.
void sgemm_nt(const float* x, int m, int k, const float* y, int n, float* c);

// ys[b] = A * xs[b] for a row-major n x n (or rows x cols) matrix; b <= 8.
void sgemv_batch(const float* a, int rows, int cols, const float* const* xs, int b, float* const* ys);

// y[t] = dot(A_row_t, x) / x[j] += ... transposed, single vector
void sgemv_rows(const float* a, int rows, int cols, const float* x, float* y);
void sgemv_t_rows(const float* a, int rows, int cols, const float* g, float* f);

// fs[b] = A^T gs[b]; streams the matrix once for the whole batch
void sgemv_t_batch(const float* a, int rows, int cols, const float* const* gs, int b,
                   float* const* fs);

// --- conv 3x3, same-size zero padding -----------------------------------------
// Input is pre-padded: (ic_n, h+2, w+2). Output (oc_n, h, w).
// Weights (oc_n, ic_n, 3, 3). bias may be null.

template <typename T>
void conv3x3_fwd(const T* inp, const T* w, const T* bias, T* out, int ic_n, int oc_n, int h, int wd);

// dW[oc][ic][t] += sum_{y,x} dout[oc][y][x] * inp[ic][y+ty][x+tx]; db likewise.
template <typename T>
void conv3x3_wgrad(const T* inp, const T* dout, T* dw, T* db, int ic_n, int oc_n, int h, int wd);

// --- dense layers (batched; each sample vector contiguous) ---------------------

// ys[b] = W xs[b] + bias, W: out_n x in_n row-major
template <typename T>
void dense_fwd(const T* w, const T* bias, const T* const* xs, T* const* ys, int b, int out_n, int in_n);

// dW[o][i] += sum_b dys[b][o] * xs[b][i]; db[o] += sum_b dys[b][o]
template <typename T>
void dense_wgrad(const T* const* xs, const T* const* dys, T* dw, T* db, int b, int out_n, int in_n);

// dxs[b][i] = sum_o W[o][i] dys[b][o]
template <typename T>
void dense_xgrad(const T* w, const T* const* dys, T* const* dxs, int b, int out_n, int in_n);

// --- fused Adam ----------------------------------------------------------------
// m = b1 m + (1-b1) g';  v = b2 v + (1-b2) g'^2;  p -= lr * mhat/(sqrt(vhat)+eps)
// with g' = g + l1 * sign(p). Bias correction uses step t (1-based).
template <typename T>
void adam_update(T* p, const T* g, T* m, T* v, size_t n, double lr, double b1, double b2,
                 double eps, long t, double l1);

template <typename T>
double l1_norm(const T* p, size_t n);

// true iff no NaN or infinity present
bool finite_scan(const float* p, size_t n);
bool finite_scan(const double* p, size_t n);

}  // namespace patkit::kern
