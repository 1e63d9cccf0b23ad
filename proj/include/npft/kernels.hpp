// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

// Dense kernels behind the tensor ops. Each kernel has an OpenMP-parallel
// implementation (parallel over output rows, so results are bitwise identical
// for any thread count) and a naive serial reference under kernels::ref used
// by tests and the kernel benchmark.

namespace npft::kernels {

// Global thread count for all kernels. 1 = serial path.
void set_threads(int n);
int threads();

// C[M,N] = A[M,K] * B[K,N]        (+= when accumulate)
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);
// C[M,N] = A[M,K] * B[N,K]^T
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);
// C[M,N] = A[K,M]^T * B[K,N]
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);

// y[rows] = W[rows,cols] * x[cols]
void matvec(const double* w, const double* x, double* y, int rows, int cols);

namespace ref {
void matmul_nn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n,
               bool accumulate = false);
void matvec(const double* w, const double* x, double* y, int rows, int cols);
}  // namespace ref

}  // namespace npft::kernels
