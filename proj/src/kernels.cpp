#include "styleproto/kernels.hpp"

#include <cstdint>

#include "styleproto/common.hpp"

namespace styleproto {

namespace kernels {

void matmul_row(const double* a_row, const double* b, double* c_row, int k,
                int n) {
  // accumulate in increasing k so every element sees the same addition order
  // as a scalar dot product
  for (int j = 0; j < n; ++j) c_row[j] = 0.0;
  for (int kk = 0; kk < k; ++kk) {
    double av = a_row[kk];
    const double* brow = b + static_cast<int64_t>(kk) * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * brow[j];
  }
}

void matmul_nt_row(const double* a_row, const double* b, double* c_row, int k,
                   int n) {
  for (int j = 0; j < n; ++j) {
    const double* brow = b + static_cast<int64_t>(j) * k;
    double acc = 0.0;
    for (int kk = 0; kk < k; ++kk) acc += a_row[kk] * brow[kk];
    c_row[j] = acc;
  }
}

namespace {

inline void matmul_tn_row(const double* a, const double* b, double* c_row,
                          int m, int k, int n, int row) {
  // c[row][j] = sum_i a[i][row] * b[i][j], accumulated in increasing i
  for (int j = 0; j < n; ++j) c_row[j] = 0.0;
  for (int i = 0; i < m; ++i) {
    double av = a[static_cast<int64_t>(i) * k + row];
    const double* brow = b + static_cast<int64_t>(i) * n;
    for (int j = 0; j < n; ++j) c_row[j] += av * brow[j];
  }
}

}  // namespace

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_row(a + static_cast<int64_t>(i) * k, b,
               c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i)
    matmul_nt_row(a + static_cast<int64_t>(i) * k, b,
                  c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n) {
#pragma omp parallel for schedule(static)
  for (int row = 0; row < k; ++row)
    matmul_tn_row(a, b, c + static_cast<int64_t>(row) * n, m, k, n, row);
}

}  // namespace kernels

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i)
    kernels::matmul_row(a + static_cast<int64_t>(i) * k, b,
                        c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int i = 0; i < m; ++i)
    kernels::matmul_nt_row(a + static_cast<int64_t>(i) * k, b,
                           c + static_cast<int64_t>(i) * n, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  for (int row = 0; row < k; ++row) {
    double* c_row = c + static_cast<int64_t>(row) * n;
    for (int j = 0; j < n; ++j) c_row[j] = 0.0;
    for (int i = 0; i < m; ++i) {
      double av = a[static_cast<int64_t>(i) * k + row];
      const double* brow = b + static_cast<int64_t>(i) * n;
      for (int j = 0; j < n; ++j) c_row[j] += av * brow[j];
    }
  }
}

}  // namespace serial

namespace dispatch {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
  if (parallel_enabled())
    kernels::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k,
               int n) {
  if (parallel_enabled())
    kernels::matmul_nt(a, b, c, m, k, n);
  else
    serial::matmul_nt(a, b, c, m, k, n);
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k,
               int n) {
  if (parallel_enabled())
    kernels::matmul_tn(a, b, c, m, k, n);
  else
    serial::matmul_tn(a, b, c, m, k, n);
}

}  // namespace dispatch

}  // namespace styleproto
