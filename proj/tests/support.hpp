// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the test suites. Everything
// here recomputes expected values from first principles (finite differences,
// brute-force enumeration, scalar re-implementations) without touching the
// code paths under test.
#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

#include "npft/common.hpp"
#include "npft/data.hpp"
#include "npft/model.hpp"
#include "npft/tensor.hpp"

namespace npft::test {

// Central finite differences of an arbitrary scalar function of one tensor.
inline std::vector<double> fd_grad(Tensor param, const std::function<double()>& loss_fn,
                                   double h = 1e-5) {
    auto d = param.mutable_data();
    std::vector<double> g(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        const double keep = d[i];
        d[i] = keep + h;
        const double up = loss_fn();
        d[i] = keep - h;
        const double down = loss_fn();
        d[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

inline double max_rel_error(std::span<const double> got, std::span<const double> want,
                            double floor = 1e-8) {
    double worst = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        const double denom = std::max(std::abs(want[i]), floor);
        worst = std::max(worst, std::abs(got[i] - want[i]) / denom);
    }
    return worst;
}

// Order-1 Markov token stream over a small alphabet; gives a toy language
// with learnable structure.
inline std::vector<int> make_toy_tokens(size_t n, int vocab, uint64_t seed) {
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // each symbol strongly prefers 2 successors
    std::vector<int> succ_a(static_cast<size_t>(vocab)), succ_b(static_cast<size_t>(vocab));
    std::uniform_int_distribution<int> pick(0, vocab - 1);
    for (int s = 0; s < vocab; ++s) {
        succ_a[static_cast<size_t>(s)] = pick(rng);
        succ_b[static_cast<size_t>(s)] = pick(rng);
    }
    std::vector<int> out(n);
    int cur = 0;
    for (size_t i = 0; i < n; ++i) {
        out[i] = cur;
        const double r = u(rng);
        cur = r < 0.45   ? succ_a[static_cast<size_t>(cur)]
              : r < 0.9 ? succ_b[static_cast<size_t>(cur)]
                         : pick(rng);
    }
    return out;
}

inline ModelConfig toy_config(uint64_t seed = 7, int vocab = 13) {
    ModelConfig cfg;
    cfg.vocab_size = vocab;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.d_ff = 16;
    cfg.context_len = 6;
    cfg.seed = seed;
    return cfg;
}

// Deterministic full-batch training on a fixed batch: the loss is then a
// smooth deterministic function of the weights, so "converged" really means
// near-zero gradient.
struct ConvergedToy {
    LanguageModel model;
    Batch batch;
    double final_loss = 0.0;
    double grad_norm = 0.0;
};

ConvergedToy make_converged_toy(int steps = 3000, uint64_t seed = 11);

// rank correlation
inline double spearman(std::span<const double> a, std::span<const double> b) {
    auto ranks = [](std::span<const double> v) {
        std::vector<size_t> idx(v.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](size_t x, size_t y) { return v[x] < v[y]; });
        std::vector<double> r(v.size());
        for (size_t i = 0; i < idx.size(); ++i) r[idx[i]] = static_cast<double>(i);
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double num = 0, da = 0, db = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        num += (ra[i] - ma) * (rb[i] - mb);
        da += (ra[i] - ma) * (ra[i] - ma);
        db += (rb[i] - mb) * (rb[i] - mb);
    }
    return num / std::sqrt(da * db);
}

}  // namespace npft::test
