// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "npft/infer.hpp"
#include "npft/model.hpp"
#include "npft/npft.hpp"
#include "npft/quant_types.hpp"
#include "npft/train.hpp"

namespace npft {

// Bad or missing configuration; the CLI exits with code 2 on this.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct CorpusConfig {
    std::string path = "corpus.txt";
    std::array<double, 3> split = {0.8, 0.1, 0.1};
    // when > 0 and the file is missing, a synthetic corpus of this many bytes
    // is generated at `path` (seeded from the global seed)
    int64_t synthetic_bytes = 0;
};

struct CalibConfig {
    int segments = 32;
    int seq_len = 128;
};

struct QuantArm {
    std::string name;
    QuantConfig q;
};

struct BenchConfig {
    std::vector<int> n_tokens = {128, 256, 512, 1024, 2048};
    int repeats = 10;
    std::vector<BenchArm> arms = {BenchArm::fp64_dense, BenchArm::packed_uniform,
                                  BenchArm::packed_sparse};
    int bits = 4;
    double outlier_ratio = 0.005;
    // optional shape override for synthetic latency runs; vocab etc. default
    bool has_model_override = false;
    ModelConfig model_override;
};

struct ExperimentConfig {
    uint64_t seed = 42;
    std::string out_dir = "runs/out";
    int threads = 1;
    CorpusConfig corpus;
    ModelConfig model;
    BaseTrainConfig train;
    CalibConfig calib;
    NpftConfig npft;
    std::vector<QuantArm> quant_arms;
    int eval_window_batch = 8;
    BenchConfig bench;

    nlohmann::json to_json() const;
};

// Strict parse: unknown keys anywhere are rejected.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig config_from_json(const nlohmann::json& j);

std::string config_hash(const ExperimentConfig& cfg);

// manifest.json next to every subcommand's outputs: config snapshot, seed,
// code version, wall time
void write_manifest(const std::string& dir, const std::string& subcommand,
                    const ExperimentConfig& cfg, double wall_seconds);

// enum <-> string helpers shared by config and CLI
std::string to_string(QuantScheme s);
std::string to_string(QuantGranularity g);
std::string to_string(LayerSubset s);
std::string to_string(NoiseDist d);
std::string to_string(NoiseAxis a);
std::string to_string(NoiseMagnitude m);
std::string to_string(MaskMode m);

}  // namespace npft
