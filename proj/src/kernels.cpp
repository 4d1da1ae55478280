#include "clipfit/kernels.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace clipfit::kern {
namespace {

int g_max_threads = -1;  // -1: resolve from OpenMP on first use
std::size_t g_parallel_min_ops = 16384;

bool parallel_ok(std::size_t ops) {
#ifdef _OPENMP
  return max_threads() > 1 && ops >= parallel_min_ops();
#else
  (void)ops;
  return false;
#endif
}

// --- per-row bodies shared by the serial and parallel variants ---

inline void matmul_nn_row(const double* a, const double* b, double* c,
                          std::size_t k, std::size_t n, bool accumulate) {
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c,
                          std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p] * brow[p];
    c[j] = accumulate ? c[j] + acc : acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c,
                          std::size_t i, std::size_t k, std::size_t m,
                          std::size_t n, bool accumulate) {
  // c row i of [m x n]; a is [k x m] read down column i.
  if (!accumulate) std::fill(c, c + n, 0.0);
  for (std::size_t p = 0; p < k; ++p) {
    const double av = a[p * m + i];
    const double* brow = b + p * n;
    for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
  }
}

inline void layer_norm_fwd_row(const double* x, const double* gain,
                               const double* bias, double* y, double* mean,
                               double* inv_std, std::size_t d, double eps) {
  double m = 0.0;
  for (std::size_t j = 0; j < d; ++j) m += x[j];
  m /= static_cast<double>(d);
  double v = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double c = x[j] - m;
    v += c * c;
  }
  v /= static_cast<double>(d);
  const double is = 1.0 / std::sqrt(v + eps);
  *mean = m;
  *inv_std = is;
  for (std::size_t j = 0; j < d; ++j) {
    y[j] = (x[j] - m) * is * gain[j] + bias[j];
  }
}

inline void layer_norm_bwd_row(const double* x, const double* gain,
                               double mean, double inv_std, const double* dy,
                               double* dx, std::size_t d) {
  // dxhat = dy * gain; then the standard full-Jacobian reduction.
  const double dd = static_cast<double>(d);
  double sum_dxhat = 0.0;
  double sum_dxhat_xhat = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    const double xhat = (x[j] - mean) * inv_std;
    const double dxhat = dy[j] * gain[j];
    sum_dxhat += dxhat;
    sum_dxhat_xhat += dxhat * xhat;
  }
  for (std::size_t j = 0; j < d; ++j) {
    const double xhat = (x[j] - mean) * inv_std;
    const double dxhat = dy[j] * gain[j];
    dx[j] += inv_std * (dxhat - sum_dxhat / dd - xhat * sum_dxhat_xhat / dd);
  }
}

inline void softmax_row(const double* x, double* y, std::size_t d) {
  double mx = x[0];
  for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, x[j]);
  double z = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    y[j] = std::exp(x[j] - mx);
    z += y[j];
  }
  const double inv = 1.0 / z;
  for (std::size_t j = 0; j < d; ++j) y[j] *= inv;
}

constexpr double kGeluA = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluB = 0.044715;

}  // namespace

int max_threads() {
#ifdef _OPENMP
  if (g_max_threads < 0) g_max_threads = omp_get_max_threads();
#else
  if (g_max_threads < 0) g_max_threads = 1;
#endif
  return g_max_threads;
}

void set_max_threads(int n) { g_max_threads = n < 1 ? 1 : n; }

std::size_t parallel_min_ops() { return g_parallel_min_ops; }

void set_parallel_min_ops(std::size_t n) { g_parallel_min_ops = n; }

double gelu_scalar(double x) {
  const double u = kGeluA * (x + kGeluB * x * x * x);
  return 0.5 * x * (1.0 + std::tanh(u));
}

double gelu_grad_scalar(double x) {
  const double u = kGeluA * (x + kGeluB * x * x * x);
  const double t = std::tanh(u);
  const double du = kGeluA * (1.0 + 3.0 * kGeluB * x * x);
  return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
}

void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    matmul_nn_row(a + i * k, b, c + i * n, k, n, accumulate);
  }
}

void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  if (!parallel_ok(m * k * n)) {
    matmul_nn_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    matmul_nn_row(a + i * k, b, c + i * n, k, n, accumulate);
  }
#endif
}

void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    matmul_nt_row(a + i * k, b, c + i * n, k, n, accumulate);
  }
}

void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  if (!parallel_ok(m * k * n)) {
    matmul_nt_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    matmul_nt_row(a + i * k, b, c + i * n, k, n, accumulate);
  }
#endif
}

void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    matmul_tn_row(a, b, c + i * n, i, k, m, n, accumulate);
  }
}

void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  if (!parallel_ok(m * k * n)) {
    matmul_tn_serial(a, b, c, m, k, n, accumulate);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    matmul_tn_row(a, b, c + i * n, static_cast<std::size_t>(i), k, m, n,
                  accumulate);
  }
#endif
}

void layer_norm_fwd_serial(const double* x, const double* gain,
                           const double* bias, double* y, double* mean,
                           double* inv_std, std::size_t rows, std::size_t d,
                           double eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    layer_norm_fwd_row(x + r * d, gain, bias, y + r * d, mean + r, inv_std + r,
                       d, eps);
  }
}

void layer_norm_fwd(const double* x, const double* gain, const double* bias,
                    double* y, double* mean, double* inv_std, std::size_t rows,
                    std::size_t d, double eps) {
  if (!parallel_ok(rows * d * 4)) {
    layer_norm_fwd_serial(x, gain, bias, y, mean, inv_std, rows, d, eps);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    layer_norm_fwd_row(x + r * d, gain, bias, y + r * d, mean + r, inv_std + r,
                       d, eps);
  }
#endif
}

void layer_norm_bwd_serial(const double* x, const double* gain,
                           const double* mean, const double* inv_std,
                           const double* dy, double* dx, double* dgain,
                           double* dbias, std::size_t rows, std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) {
    layer_norm_bwd_row(x + r * d, gain, mean[r], inv_std[r], dy + r * d,
                       dx + r * d, d);
  }
  // gain/bias reduction stays serial: fixed row order regardless of threads.
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    const double* dyr = dy + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mean[r]) * inv_std[r];
      dgain[j] += dyr[j] * xhat;
      dbias[j] += dyr[j];
    }
  }
}

void layer_norm_bwd(const double* x, const double* gain, const double* mean,
                    const double* inv_std, const double* dy, double* dx,
                    double* dgain, double* dbias, std::size_t rows,
                    std::size_t d) {
  if (!parallel_ok(rows * d * 6)) {
    layer_norm_bwd_serial(x, gain, mean, inv_std, dy, dx, dgain, dbias, rows,
                          d);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    layer_norm_bwd_row(x + r * d, gain, mean[r], inv_std[r], dy + r * d,
                       dx + r * d, d);
  }
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x + r * d;
    const double* dyr = dy + r * d;
    for (std::size_t j = 0; j < d; ++j) {
      const double xhat = (xr[j] - mean[r]) * inv_std[r];
      dgain[j] += dyr[j] * xhat;
      dbias[j] += dyr[j];
    }
  }
#endif
}

void gelu_fwd_serial(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_fwd(const double* x, double* y, std::size_t n) {
  if (!parallel_ok(n * 8)) {
    gelu_fwd_serial(x, y, n);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    y[i] = gelu_scalar(x[i]);
  }
#endif
}

void gelu_bwd_serial(const double* x, const double* dy, double* dx,
                     std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dx[i] += dy[i] * gelu_grad_scalar(x[i]);
}

void gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n) {
  if (!parallel_ok(n * 10)) {
    gelu_bwd_serial(x, dy, dx, n);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    dx[i] += dy[i] * gelu_grad_scalar(x[i]);
  }
#endif
}

void softmax_rows_fwd_serial(const double* x, double* y, std::size_t rows,
                             std::size_t d) {
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x + r * d, y + r * d, d);
}

void softmax_rows_fwd(const double* x, double* y, std::size_t rows,
                      std::size_t d) {
  if (!parallel_ok(rows * d * 4)) {
    softmax_rows_fwd_serial(x, y, rows, d);
    return;
  }
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(max_threads())
  for (long long r = 0; r < static_cast<long long>(rows); ++r) {
    softmax_row(x + r * d, y + r * d, d);
  }
#endif
}

}  // namespace clipfit::kern
