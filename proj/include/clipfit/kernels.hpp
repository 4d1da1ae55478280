#pragma once

#include <cstddef>

namespace clipfit::kern {

// Hot numeric loops, each in two variants: a plain serial reference and an
// OpenMP version parallelized over output rows. Every output element is
// produced by exactly one thread using the same inner-loop order as the
// serial code, so the two variants are bitwise identical; the test suite
// asserts that and the bench target times them against each other.
//
// The un-suffixed entry points dispatch: they take the parallel path when
// OpenMP is available, more than one thread is configured, and the problem
// has at least parallel_min_ops() scalar multiply-adds. Cheap elementwise
// work stays serial in ops.cpp by design.

int max_threads();
void set_max_threads(int n);  // n <= 1 forces serial everywhere

std::size_t parallel_min_ops();
void set_parallel_min_ops(std::size_t n);  // 0 forces the parallel path

// c[m x n] = a[m x k] * b[k x n]          (accumulate: c += ...)
void matmul_nn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate = false);

// c[m x n] = a[m x k] * b[n x k]^T
void matmul_nt(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate = false);

// c[m x n] = a[k x m]^T * b[k x n]
void matmul_tn(const double* a, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn_serial(const double* a, const double* b, double* c,
                      std::size_t m, std::size_t k, std::size_t n,
                      bool accumulate = false);

// Row-wise layer norm: y = (x - mean) / sqrt(var + eps) * gain + bias,
// statistics per row over d columns. mean/inv_std (one per row) are written
// for the backward pass.
void layer_norm_fwd(const double* x, const double* gain, const double* bias,
                    double* y, double* mean, double* inv_std, std::size_t rows,
                    std::size_t d, double eps);
void layer_norm_fwd_serial(const double* x, const double* gain,
                           const double* bias, double* y, double* mean,
                           double* inv_std, std::size_t rows, std::size_t d,
                           double eps);

// Accumulates dx (rows x d); dgain/dbias (d) are reduced serially across rows
// to keep summation order fixed.
void layer_norm_bwd(const double* x, const double* gain, const double* mean,
                    const double* inv_std, const double* dy, double* dx,
                    double* dgain, double* dbias, std::size_t rows,
                    std::size_t d);
void layer_norm_bwd_serial(const double* x, const double* gain,
                           const double* mean, const double* inv_std,
                           const double* dy, double* dx, double* dgain,
                           double* dbias, std::size_t rows, std::size_t d);

// Tanh-approximation GELU, elementwise.
void gelu_fwd(const double* x, double* y, std::size_t n);
void gelu_fwd_serial(const double* x, double* y, std::size_t n);
void gelu_bwd(const double* x, const double* dy, double* dx, std::size_t n);
void gelu_bwd_serial(const double* x, const double* dy, double* dx,
                     std::size_t n);

// Row-wise softmax with max-subtraction.
void softmax_rows_fwd(const double* x, double* y, std::size_t rows,
                      std::size_t d);
void softmax_rows_fwd_serial(const double* x, double* y, std::size_t rows,
                             std::size_t d);

double gelu_scalar(double x);
double gelu_grad_scalar(double x);

}  // namespace clipfit::kern
