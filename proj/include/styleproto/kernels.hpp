#pragma once

// Dense row-major matmul kernels.  The kernels:: versions parallelize over
// output rows; the serial:: versions run the same row routine in a plain
// loop.  Both share the single-row helpers below, so the per-element
// addition order is identical and results match bit for bit at any thread
// count (the build disables FP contraction to keep that true).

namespace styleproto::kernels {

// c_row[j] = sum_k a_row[k] * b[k][j]   (b is [k×n] row-major)
void matmul_row(const double* a_row, const double* b, double* c_row, int k,
                int n);
// c_row[j] = sum_k a_row[k] * b[j][k]   (b is [n×k] row-major)
void matmul_nt_row(const double* a_row, const double* b, double* c_row, int k,
                   int n);

// c[m×n] = a[m×k] · b[k×n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m×n] = a[m×k] · b[n×k]ᵀ
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n);
// c[k×n] = a[m×k]ᵀ · b[m×n]
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n);

}  // namespace styleproto::kernels

namespace styleproto::serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n);

}  // namespace styleproto::serial

namespace styleproto::dispatch {

// Routed by set_parallel_enabled() (common.hpp); lets the whole model run
// through either kernel set for the serial-vs-parallel equality tests.
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n);

}  // namespace styleproto::dispatch
