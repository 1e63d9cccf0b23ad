// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "npft/common.hpp"
#include "npft/model.hpp"
#include "npft/sensitivity.hpp"

namespace npft {

enum class NoiseDist { uniform, gaussian, laplace };
enum class NoiseAxis { output_channel, input_channel };
enum class NoiseMagnitude { channel_range, quant_bin };
enum class MaskMode { outliers_only, whole_channel };

struct NoiseSpec {
    NoiseDist dist = NoiseDist::uniform;
    NoiseAxis axis = NoiseAxis::output_channel;
    NoiseMagnitude magnitude = NoiseMagnitude::quant_bin;
    int bits = 4;  // quant_bin only, [2,8]
    MaskMode mask_mode = MaskMode::outliers_only;
    uint64_t seed = 0;

    void validate() const;
};

// A concrete sampled perturbation: one additive matrix per targeted weight.
// Every sampled channel is exactly zero-mean over its support.
struct NoiseOverlay {
    std::map<WeightId, Tensor> z;
    NoiseSpec spec;
    int epoch = 0;
};

// Core per-matrix sampler: draws i.i.d. values on the allowed positions of
// every channel containing a mask position, then centers each channel's
// support to mean zero. Channels with a degenerate range (or no mask hits)
// get no noise.
Tensor sample_noise_matrix(const Tensor& w, const std::vector<std::pair<int, int>>& mask_positions,
                           const NoiseSpec& spec, uint64_t seed);

NoiseOverlay sample_noise(const LanguageModel& model, const OutlierMask& mask,
                          const NoiseSpec& spec);

// Overlay set seen by forward passes; base weights stay untouched.
std::vector<Overlay> apply_noise(const NoiseOverlay& overlay);

// Raw (pre-centering) channel draws -- the distribution under test in the
// sampling checks. lo/hi is the uniform support; gaussian/laplace match its
// mean and variance.
void sample_channel_values(NoiseDist dist, double lo, double hi, std::span<double> out, Rng& rng);

}  // namespace npft
