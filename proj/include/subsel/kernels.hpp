#pragma once

#include <cstddef>

// Data-parallel inner loops. The `kern` versions carry OpenMP pragmas over
// independent output elements only, so results are bit-identical to the
// serial `kern::ref` versions for any thread count. Reductions that fold the
// whole buffer stay serial to keep summation order fixed.

namespace subsel::kern {

// C (m x n) = A (m x k) * B (k x n)
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
// C (m x k) = A (m x n) * B^T, B is (k x n)
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k);
// C (k x n) = A^T * B, A is (m x k), B is (m x n)
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);

// Per-row softmax of X (rows x cols) into Y (max-subtracted, rows sum to 1).
void rows_softmax(const double* x, double* y, std::size_t rows, std::size_t cols);

// Per-row layer normalization: y = (x - mean) / sqrt(var + eps), population
// variance; affine is applied by the caller.
void rows_standardize(const double* x, double* y, std::size_t rows, std::size_t cols,
                      double eps);

namespace ref {  // serial reference implementations, kept for tests and the benchmark

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k);
void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n);
void rows_softmax(const double* x, double* y, std::size_t rows, std::size_t cols);
void rows_standardize(const double* x, double* y, std::size_t rows, std::size_t cols,
                      double eps);

}  // namespace ref

}  // namespace subsel::kern
