// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstring>

namespace npft::kernels {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) { g_threads.store(std::max(1, n)); }
int threads() { return g_threads.load(); }

// Row-parallel: each output row is accumulated serially in a fixed order, so
// the result does not depend on the thread count.

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    const int nt = threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
        const double* arow = a + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    const int nt = threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
    for (int i = 0; i < m; ++i) {
        const double* arow = a + static_cast<size_t>(i) * k;
        double* crow = c + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = accumulate ? crow[j] + acc : acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    const int nt = threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && m > 1)
    for (int i = 0; i < m; ++i) {
        double* crow = c + static_cast<size_t>(i) * n;
        if (!accumulate) std::memset(crow, 0, sizeof(double) * n);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<size_t>(p) * m + i];
            const double* brow = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matvec(const double* w, const double* x, double* y, int rows, int cols) {
    const int nt = threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && rows > 1)
    for (int i = 0; i < rows; ++i) {
        const double* wrow = w + static_cast<size_t>(i) * cols;
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += wrow[j] * x[j];
        y[i] = acc;
    }
}

namespace ref {

// Textbook i-j-k loops, no parallelism. Kept as the comparison baseline.

void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(p) * n + j];
            double& out = c[static_cast<size_t>(i) * n + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(i) * k + p] * b[static_cast<size_t>(j) * k + p];
            double& out = c[static_cast<size_t>(i) * n + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p)
                acc += a[static_cast<size_t>(p) * m + i] * b[static_cast<size_t>(p) * n + j];
            double& out = c[static_cast<size_t>(i) * n + j];
            out = accumulate ? out + acc : acc;
        }
    }
}

void matvec(const double* w, const double* x, double* y, int rows, int cols) {
    for (int i = 0; i < rows; ++i) {
        double acc = 0.0;
        for (int j = 0; j < cols; ++j) acc += w[static_cast<size_t>(i) * cols + j] * x[j];
        y[i] = acc;
    }
}

}  // namespace ref

}  // namespace npft::kernels
