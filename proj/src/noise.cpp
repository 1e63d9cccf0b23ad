// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/noise.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "npft/common.hpp"

namespace npft {

void NoiseSpec::validate() const {
    if (magnitude == NoiseMagnitude::quant_bin && (bits < 2 || bits > 8))
        throw std::invalid_argument("NoiseSpec: quant_bin bits must be in [2,8]");
}

void sample_channel_values(NoiseDist dist, double lo, double hi, std::span<double> out, Rng& rng) {
    const double mean = 0.5 * (lo + hi);
    const double range = hi - lo;
    // variance matched to U[lo,hi]: range^2/12
    const double sigma = range / std::sqrt(12.0);
    switch (dist) {
        case NoiseDist::uniform: {
            std::uniform_real_distribution<double> u(lo, hi);
            for (double& x : out) x = u(rng);
            break;
        }
        case NoiseDist::gaussian: {
            std::normal_distribution<double> g(mean, sigma);
            for (double& x : out) x = g(rng);
            break;
        }
        case NoiseDist::laplace: {
            // inverse-CDF sampling; Var = 2b^2 -> b = sigma/sqrt(2)
            const double b = sigma / std::sqrt(2.0);
            std::uniform_real_distribution<double> u(-0.5, 0.5);
            for (double& x : out) {
                const double p = u(rng);
                x = mean - b * (p < 0 ? -1.0 : 1.0) * std::log(1.0 - 2.0 * std::abs(p));
            }
            break;
        }
    }
}

Tensor sample_noise_matrix(const Tensor& w, const std::vector<std::pair<int, int>>& mask_positions,
                           const NoiseSpec& spec, uint64_t seed) {
    spec.validate();
    const int64_t rows = w.rows(), cols = w.cols();
    for (const auto& [r, c] : mask_positions)
        if (r < 0 || r >= rows || c < 0 || c >= cols)
            throw std::out_of_range("sample_noise_matrix: mask position out of range");

    Tensor z = Tensor::zeros(w.shape());
    const bool by_row = spec.axis == NoiseAxis::output_channel;
    const int64_t n_channels = by_row ? rows : cols;
    const int64_t channel_len = by_row ? cols : rows;

    // mask positions grouped per channel
    std::vector<std::vector<int64_t>> in_channel(static_cast<size_t>(n_channels));
    for (const auto& [r, c] : mask_positions)
        in_channel[static_cast<size_t>(by_row ? r : c)].push_back(by_row ? c : r);

    Rng rng(seed);
    std::vector<double> draws;
    for (int64_t ch = 0; ch < n_channels; ++ch) {
        auto& hits = in_channel[static_cast<size_t>(ch)];
        if (hits.empty()) continue;
        std::sort(hits.begin(), hits.end());

        // channel statistics from W
        double lo = 0.0, hi = 0.0;
        {
            double mn = 1e300, mx = -1e300;
            for (int64_t i = 0; i < channel_len; ++i) {
                const double v = by_row ? w.at(ch, i) : w.at(i, ch);
                mn = std::min(mn, v);
                mx = std::max(mx, v);
            }
            if (spec.magnitude == NoiseMagnitude::channel_range) {
                lo = mn;
                hi = mx;
            } else {
                const double delta =
                    (mx - mn) / static_cast<double>((1 << spec.bits) - 1);  // rtn bin width
                lo = -delta / 2.0;
                hi = delta / 2.0;
            }
            if (mx == mn) continue;  // degenerate channel: no noise
        }

        // support: mask hits only, or the whole channel
        std::span<const int64_t> support_idx;
        std::vector<int64_t> whole;
        if (spec.mask_mode == MaskMode::outliers_only) {
            support_idx = hits;
        } else {
            whole.resize(static_cast<size_t>(channel_len));
            for (int64_t i = 0; i < channel_len; ++i) whole[static_cast<size_t>(i)] = i;
            support_idx = whole;
        }

        draws.resize(support_idx.size());
        sample_channel_values(spec.dist, lo, hi, draws, rng);
        double mean = 0.0;
        for (double d : draws) mean += d;
        mean /= static_cast<double>(draws.size());
        for (size_t i = 0; i < support_idx.size(); ++i) {
            const int64_t pos = support_idx[i];
            const double val = draws[i] - mean;
            if (by_row)
                z.at(ch, pos) = val;
            else
                z.at(pos, ch) = val;
        }
    }
    return z;
}

NoiseOverlay sample_noise(const LanguageModel& model, const OutlierMask& mask,
                          const NoiseSpec& spec) {
    NoiseOverlay out;
    out.spec = spec;
    for (const auto& [id, positions] : mask.positions) {
        const Tensor& w = model.weight(id);
        const uint64_t seed = derive_seed(spec.seed, "noise:" + to_string(id));
        out.z.emplace(id, sample_noise_matrix(w, positions, spec, seed));
    }
    return out;
}

std::vector<Overlay> apply_noise(const NoiseOverlay& overlay) {
    std::vector<Overlay> out;
    out.reserve(overlay.z.size());
    for (const auto& [id, z] : overlay.z) out.push_back({id, z});
    return out;
}

}  // namespace npft
