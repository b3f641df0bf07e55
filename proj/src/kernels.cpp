#include "subsel/kernels.hpp"

#include <cmath>

namespace subsel::kern {

namespace {
// Tiny matrices dominate this workload; skip the OpenMP fork below this many
// output elements.
constexpr std::size_t kParallelCutoff = 16 * 1024;

inline void softmax_row(const double* x, double* y, std::size_t cols) {
    double mx = x[0];
    for (std::size_t j = 1; j < cols; ++j) mx = x[j] > mx ? x[j] : mx;
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = std::exp(x[j] - mx);
        z += y[j];
    }
    for (std::size_t j = 0; j < cols; ++j) y[j] /= z;
}

inline void standardize_row(const double* x, double* y, std::size_t cols, double eps) {
    double mean = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mean += x[j];
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
        const double d = x[j] - mean;
        var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) y[j] = (x[j] - mean) * inv;
}
}  // namespace

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * n >= kParallelCutoff)
    for (long i = 0; i < rows; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        const double* ai = a + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k) {
    const long rows = static_cast<long>(m);
#pragma omp parallel for schedule(static) if (m * k >= kParallelCutoff)
    for (long i = 0; i < rows; ++i) {
        const double* ai = a + static_cast<std::size_t>(i) * n;
        double* ci = c + static_cast<std::size_t>(i) * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* bj = b + j * n;
            double s = 0.0;
            for (std::size_t p = 0; p < n; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    const long rows = static_cast<long>(k);
#pragma omp parallel for schedule(static) if (k * n >= kParallelCutoff)
    for (long i = 0; i < rows; ++i) {
        double* ci = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < m; ++p) s += a[p * k + static_cast<std::size_t>(i)] * b[p * n + j];
            ci[j] = s;
        }
    }
}

void rows_softmax(const double* x, double* y, std::size_t rows, std::size_t cols) {
    const long r = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelCutoff)
    for (long i = 0; i < r; ++i)
        softmax_row(x + static_cast<std::size_t>(i) * cols, y + static_cast<std::size_t>(i) * cols, cols);
}

void rows_standardize(const double* x, double* y, std::size_t rows, std::size_t cols,
                      double eps) {
    const long r = static_cast<long>(rows);
#pragma omp parallel for schedule(static) if (rows * cols >= kParallelCutoff)
    for (long i = 0; i < r; ++i)
        standardize_row(x + static_cast<std::size_t>(i) * cols, y + static_cast<std::size_t>(i) * cols,
                        cols, eps);
}

namespace ref {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c,
               std::size_t m, std::size_t n, std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * n;
        double* ci = c + i * k;
        for (std::size_t j = 0; j < k; ++j) {
            const double* bj = b + j * n;
            double s = 0.0;
            for (std::size_t p = 0; p < n; ++p) s += ai[p] * bj[p];
            ci[j] = s;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c,
               std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < k; ++i) {
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < m; ++p) s += a[p * k + i] * b[p * n + j];
            ci[j] = s;
        }
    }
}

void rows_softmax(const double* x, double* y, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) softmax_row(x + i * cols, y + i * cols, cols);
}

void rows_standardize(const double* x, double* y, std::size_t rows, std::size_t cols,
                      double eps) {
    for (std::size_t i = 0; i < rows; ++i) standardize_row(x + i * cols, y + i * cols, cols, eps);
}

}  // namespace ref

}  // namespace subsel::kern
