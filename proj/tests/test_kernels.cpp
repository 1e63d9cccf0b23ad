// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <random>
#include <vector>

#include "npft/kernels.hpp"

using namespace npft;

namespace {

std::vector<double> random_vec(size_t n, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, 1.0);
    std::vector<double> v(n);
    for (double& x : v) x = d(rng);
    return v;
}

}  // namespace

TEST_SUITE_BEGIN("kernels");

TEST_CASE("optimized kernels match the serial references bitwise") {
    std::mt19937_64 shapes(1);
    std::uniform_int_distribution<int> dim(1, 33);
    for (int trial = 0; trial < 20; ++trial) {
        const int m = dim(shapes), k = dim(shapes), n = dim(shapes);
        const auto a = random_vec(static_cast<size_t>(m) * k, 100 + trial);
        const auto b = random_vec(static_cast<size_t>(k) * n, 200 + trial);
        const auto bt = random_vec(static_cast<size_t>(n) * k, 300 + trial);
        const auto at = random_vec(static_cast<size_t>(k) * m, 400 + trial);
        std::vector<double> c0(static_cast<size_t>(m) * n), c1(c0.size());

        for (int threads : {1, 4}) {
            kernels::set_threads(threads);
            kernels::ref::matmul_nn(a.data(), b.data(), c0.data(), m, k, n);
            kernels::matmul_nn(a.data(), b.data(), c1.data(), m, k, n);
            CHECK(c0 == c1);

            kernels::ref::matmul_nt(a.data(), bt.data(), c0.data(), m, k, n);
            kernels::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
            CHECK(c0 == c1);

            kernels::ref::matmul_tn(at.data(), b.data(), c0.data(), m, k, n);
            kernels::matmul_tn(at.data(), b.data(), c1.data(), m, k, n);
            CHECK(c0 == c1);
        }
        kernels::set_threads(1);
    }
}

TEST_CASE("accumulate variant adds to the existing output") {
    const int m = 5, k = 7, n = 3;
    const auto a = random_vec(static_cast<size_t>(m) * k, 1);
    const auto b = random_vec(static_cast<size_t>(k) * n, 2);
    std::vector<double> base(static_cast<size_t>(m) * n, 0.5);
    auto acc = base;
    kernels::matmul_nn(a.data(), b.data(), acc.data(), m, k, n, true);
    std::vector<double> plain(static_cast<size_t>(m) * n);
    kernels::matmul_nn(a.data(), b.data(), plain.data(), m, k, n);
    for (size_t i = 0; i < acc.size(); ++i) CHECK(acc[i] == doctest::Approx(0.5 + plain[i]));
}

TEST_CASE("matvec agrees with the reference") {
    const int rows = 17, cols = 9;
    const auto w = random_vec(static_cast<size_t>(rows) * cols, 3);
    const auto x = random_vec(static_cast<size_t>(cols), 4);
    std::vector<double> y0(static_cast<size_t>(rows)), y1(y0.size());
    kernels::ref::matvec(w.data(), x.data(), y0.data(), rows, cols);
    for (int threads : {1, 4}) {
        kernels::set_threads(threads);
        kernels::matvec(w.data(), x.data(), y1.data(), rows, cols);
        CHECK(y0 == y1);
    }
    kernels::set_threads(1);
}

TEST_SUITE_END();
