// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "npft/noise.hpp"
#include "support.hpp"

using namespace npft;
using npft::test::make_toy_tokens;
using npft::test::toy_config;

namespace {

Tensor random_weight(int rows, int cols, uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, 0.05);
    Tensor w = Tensor::zeros({rows, cols});
    for (double& x : w.mutable_data()) x = d(rng);
    return w;
}

// Kolmogorov-Smirnov distance against a CDF
double ks_distance(std::vector<double> samples, const std::function<double(double)>& cdf) {
    std::sort(samples.begin(), samples.end());
    double d = 0.0;
    const double n = static_cast<double>(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max(d, std::abs((i + 1.0) / n - f));
        d = std::max(d, std::abs(f - i / n));
    }
    return d;
}

}  // namespace

TEST_SUITE_BEGIN("noise");

TEST_CASE("empty mask produces an all-zero overlay") {
    Tensor w = random_weight(6, 8, 1);
    NoiseSpec spec;
    Tensor z = sample_noise_matrix(w, {}, spec, 2);
    for (double x : z.data()) CHECK(x == 0.0);
}

TEST_CASE("a single-position channel support is forced to zero by centering") {
    Tensor w = random_weight(6, 8, 3);
    NoiseSpec spec;  // outliers_only, output_channel
    Tensor z = sample_noise_matrix(w, {{2, 5}}, spec, 4);
    for (double x : z.data()) CHECK(x == 0.0);
}

TEST_CASE("zero mean per sampled channel is exact") {
    Tensor w = random_weight(8, 16, 5);
    std::vector<std::pair<int, int>> mask = {{0, 1}, {0, 7}, {0, 12}, {3, 2},
                                             {3, 3}, {3, 9}, {5, 0}, {5, 15}};
    for (NoiseDist dist : {NoiseDist::uniform, NoiseDist::gaussian, NoiseDist::laplace}) {
        NoiseSpec spec;
        spec.dist = dist;
        Tensor z = sample_noise_matrix(w, mask, spec, 6);
        for (int r : {0, 3, 5}) {
            double s = 0.0;
            for (int64_t c = 0; c < z.cols(); ++c) s += z.at(r, c);
            CHECK(std::abs(s) <= 1e-12);
        }
    }
}

TEST_CASE("support discipline") {
    Tensor w = random_weight(8, 16, 7);
    std::vector<std::pair<int, int>> mask = {{1, 2}, {1, 9}, {4, 0}, {4, 3}, {4, 11}};

    SUBCASE("outliers_only: nothing outside the mask") {
        NoiseSpec spec;
        spec.mask_mode = MaskMode::outliers_only;
        Tensor z = sample_noise_matrix(w, mask, spec, 8);
        for (int64_t r = 0; r < z.rows(); ++r)
            for (int64_t c = 0; c < z.cols(); ++c) {
                const bool in_mask =
                    std::find(mask.begin(), mask.end(),
                              std::pair(static_cast<int>(r), static_cast<int>(c))) != mask.end();
                if (!in_mask) CHECK(z.at(r, c) == 0.0);
            }
    }
    SUBCASE("whole_channel: nothing outside mask-containing channels") {
        NoiseSpec spec;
        spec.mask_mode = MaskMode::whole_channel;
        Tensor z = sample_noise_matrix(w, mask, spec, 9);
        int nonzero_rows = 0;
        for (int64_t r = 0; r < z.rows(); ++r) {
            bool any = false;
            for (int64_t c = 0; c < z.cols(); ++c) any = any || z.at(r, c) != 0.0;
            if (r == 1 || r == 4) {
                CHECK(any);
                ++nonzero_rows;
            } else {
                CHECK_FALSE(any);
            }
        }
        CHECK(nonzero_rows == 2);
    }
    SUBCASE("input_channel axis groups by column") {
        NoiseSpec spec;
        spec.axis = NoiseAxis::input_channel;
        spec.mask_mode = MaskMode::whole_channel;
        Tensor z = sample_noise_matrix(w, {{1, 2}, {4, 2}, {0, 5}}, spec, 10);
        for (int64_t c = 0; c < z.cols(); ++c) {
            bool any = false;
            for (int64_t r = 0; r < z.rows(); ++r) any = any || z.at(r, c) != 0.0;
            CHECK(any == (c == 2 || c == 5));
        }
    }
}

TEST_CASE("seed determinism: identical (W, mask, spec) give identical overlays") {
    Tensor w = random_weight(8, 16, 11);
    std::vector<std::pair<int, int>> mask = {{0, 1}, {0, 2}, {2, 5}, {2, 6}};
    NoiseSpec spec;
    Tensor a = sample_noise_matrix(w, mask, spec, 12);
    Tensor b = sample_noise_matrix(w, mask, spec, 12);
    for (int64_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
    Tensor c = sample_noise_matrix(w, mask, spec, 13);
    bool all_same = true;
    for (int64_t i = 0; i < a.size(); ++i) all_same = all_same && a.data()[i] == c.data()[i];
    CHECK_FALSE(all_same);
}

TEST_CASE("degenerate channel (max == min) gets zero noise in channel_range mode") {
    Tensor w = Tensor::zeros({4, 6});
    for (int64_t c = 0; c < 6; ++c) w.at(1, c) = 0.7;  // constant channel
    NoiseSpec spec;
    spec.magnitude = NoiseMagnitude::channel_range;
    spec.mask_mode = MaskMode::whole_channel;
    Tensor z = sample_noise_matrix(w, {{1, 0}, {1, 3}}, spec, 14);
    for (double x : z.data()) CHECK(x == 0.0);
}

TEST_CASE("uniform quant_bin noise has variance delta^2/12 within 2%") {
    // one wide channel, 10^6 draws pre-centering
    const int n = 1000000;
    Rng rng(15);
    std::vector<double> draws(static_cast<size_t>(n));
    const double delta = 0.31;
    sample_channel_values(NoiseDist::uniform, -delta / 2, delta / 2, draws, rng);
    double mean = 0.0;
    for (double x : draws) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : draws) var += (x - mean) * (x - mean);
    var /= n - 1;
    const double want = delta * delta / 12.0;
    CHECK(std::abs(var - want) <= 0.02 * want);
}

TEST_CASE("gaussian and laplace match the uniform variance") {
    const int n = 200000;
    const double lo = -0.2, hi = 0.6;
    const double want_mean = 0.2, want_var = 0.8 * 0.8 / 12.0;
    for (NoiseDist dist : {NoiseDist::gaussian, NoiseDist::laplace}) {
        Rng rng(16);
        std::vector<double> draws(static_cast<size_t>(n));
        sample_channel_values(dist, lo, hi, draws, rng);
        double mean = 0.0;
        for (double x : draws) mean += x;
        mean /= n;
        double var = 0.0;
        for (double x : draws) var += (x - mean) * (x - mean);
        var /= n - 1;
        CHECK(std::abs(mean - want_mean) <= 0.02);
        CHECK(std::abs(var - want_var) <= 0.03 * want_var);
    }
}

TEST_CASE("Kolmogorov-Smirnov sanity for all three distributions") {
    const int n = 100000;
    const double crit = 1.628 / std::sqrt(static_cast<double>(n));  // p = 0.01
    const double lo = -0.5, hi = 0.5;
    const double sigma = 1.0 / std::sqrt(12.0);

    Rng rng(17);
    std::vector<double> draws(static_cast<size_t>(n));

    sample_channel_values(NoiseDist::uniform, lo, hi, draws, rng);
    CHECK(ks_distance(draws, [&](double x) {
              return std::clamp((x - lo) / (hi - lo), 0.0, 1.0);
          }) < crit);

    sample_channel_values(NoiseDist::gaussian, lo, hi, draws, rng);
    CHECK(ks_distance(draws, [&](double x) {
              return 0.5 * (1.0 + std::erf(x / (sigma * std::sqrt(2.0))));
          }) < crit);

    sample_channel_values(NoiseDist::laplace, lo, hi, draws, rng);
    const double b = sigma / std::sqrt(2.0);
    CHECK(ks_distance(draws, [&](double x) {
              return x < 0 ? 0.5 * std::exp(x / b) : 1.0 - 0.5 * std::exp(-x / b);
          }) < crit);
}

TEST_CASE("apply_noise is non-destructive and additive") {
    ModelConfig cfg = toy_config(71);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 72);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 73);
    const double base_loss = m.forward_loss(batch).item();
    const uint64_t base_hash = m.weight_hash();

    OutlierMask mask;
    mask.positions[{0, WeightName::attn_q}] = {{0, 0}, {0, 1}, {1, 3}, {1, 5}};
    mask.positions[{1, WeightName::mlp_out}] = {{2, 0}, {2, 7}};
    NoiseSpec spec;
    spec.seed = 74;
    NoiseOverlay overlay = sample_noise(m, mask, spec);
    auto ovs = apply_noise(overlay);

    SUBCASE("apply then remove recovers the original loss") {
        const double with = m.forward_loss(batch, ovs).item();
        (void)with;
        CHECK(m.forward_loss(batch).item() == base_loss);
        CHECK(m.weight_hash() == base_hash);
    }
    SUBCASE("applying the overlay twice doubles the perturbation") {
        std::vector<Overlay> twice = ovs;
        twice.insert(twice.end(), ovs.begin(), ovs.end());
        NoiseOverlay doubled = overlay;
        for (auto& [id, z] : doubled.z)
            for (double& x : z.mutable_data()) x *= 2.0;
        auto ovs2 = apply_noise(doubled);
        CHECK(m.forward_loss(batch, twice).item() == m.forward_loss(batch, ovs2).item());
    }
    SUBCASE("overlay loss equals a clone with literally mutated weights") {
        LanguageModel mutated = m.clone();
        for (const auto& [id, z] : overlay.z) {
            auto wd = mutated.weight(id).mutable_data();
            for (int64_t i = 0; i < z.size(); ++i) wd[i] += z.data()[i];
        }
        CHECK(std::abs(m.forward_loss(batch, ovs).item() -
                       mutated.forward_loss(batch).item()) <= 1e-10);
    }
}

TEST_SUITE_END();
