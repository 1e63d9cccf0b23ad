// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "npft/config.hpp"

using namespace npft;
using nlohmann::json;

TEST_SUITE_BEGIN("config");

namespace {

json full_config() {
    return json::parse(R"({
      "seed": 7,
      "out_dir": "runs/x",
      "threads": 2,
      "corpus": {"path": "c.txt", "split": [0.8, 0.1, 0.1], "synthetic_bytes": 1000},
      "model": {"vocab_size": 256, "d_model": 64, "n_layers": 1, "n_heads": 4,
                "d_ff": 128, "context_len": 32},
      "train": {"max_steps": 10, "batch_size": 4, "lr": 0.001, "log_every": 5},
      "calib": {"segments": 8, "seq_len": 32},
      "npft": {"gamma": 0.01, "beta": 0.5, "epochs": 2, "lr": 0.0001,
               "lora_rank": 4, "lora_alpha": 16, "target_bits": 4, "batch_size": 4,
               "layer_subset": "all", "resample_per_step": false,
               "fisher_batch_size": 4,
               "noise": {"dist": "uniform", "axis": "output_channel",
                          "magnitude": "quant_bin", "bits": 4,
                          "mask_mode": "outliers_only"}},
      "quant_arms": [
        {"name": "rtn4", "bits": 4, "scheme": "rtn",
         "granularity": "per_output_channel"},
        {"name": "km3", "bits": 3, "scheme": "kmeans", "keep_outliers_fp": true,
         "outlier_ratio": 0.005}
      ],
      "eval": {"window_batch": 4},
      "bench": {"n_tokens": [4, 8], "repeats": 2,
                 "arms": ["fp64_dense", "packed_uniform"], "bits": 4,
                 "outlier_ratio": 0.005}
    })");
}

}  // namespace

TEST_CASE("full config parses with every field") {
    ExperimentConfig c = config_from_json(full_config());
    CHECK(c.seed == 7);
    CHECK(c.model.d_model == 64);
    CHECK(c.npft.noise.mask_mode == MaskMode::outliers_only);
    CHECK(c.quant_arms.size() == 2);
    CHECK(c.quant_arms[1].q.scheme == QuantScheme::kmeans_nonuniform);
    CHECK(c.bench.arms.size() == 2);
}

TEST_CASE("unknown keys are rejected at every level") {
    json j = full_config();
    j["surprise"] = 1;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["npft"]["typo_gamma"] = 0.1;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["npft"]["noise"]["skew"] = 2.0;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["bench"]["warmup"] = true;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
}

TEST_CASE("invalid values are rejected") {
    json j = full_config();
    j["npft"]["gamma"] = 1.5;
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["model"]["n_heads"] = 3;  // does not divide d_model
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["npft"]["layer_subset"] = "everything";
    CHECK_THROWS_AS(config_from_json(j), ConfigError);

    j = full_config();
    j["corpus"]["split"] = {0.5, 0.5};
    CHECK_THROWS_AS(config_from_json(j), ConfigError);
}

TEST_CASE("defaults apply when sections are omitted") {
    ExperimentConfig c = config_from_json(json::parse(R"({"seed": 3})"));
    CHECK(c.model.d_model == 128);
    CHECK(c.npft.gamma == 0.005);
    CHECK(c.npft.beta == 0.5);
    CHECK(c.npft.epochs == 6);
    CHECK(c.npft.noise.dist == NoiseDist::uniform);
    CHECK(c.npft.noise.axis == NoiseAxis::output_channel);
    CHECK(c.calib.segments == 32);
}

TEST_CASE("config hash is stable and sensitive") {
    ExperimentConfig a = config_from_json(full_config());
    ExperimentConfig b = config_from_json(full_config());
    CHECK(config_hash(a) == config_hash(b));
    b.seed = 8;
    CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("round-trip through to_json") {
    ExperimentConfig a = config_from_json(full_config());
    ExperimentConfig b = config_from_json(a.to_json());
    CHECK(config_hash(a) == config_hash(b));
}

TEST_CASE("manifest is written with the config snapshot") {
    const auto dir = (std::filesystem::temp_directory_path() / "npft_manifest_test").string();
    ExperimentConfig c = config_from_json(full_config());
    write_manifest(dir, "unit-test", c, 1.25);
    std::ifstream in(dir + "/manifest.json");
    REQUIRE(in.is_open());
    json j;
    in >> j;
    CHECK(j["subcommand"] == "unit-test");
    CHECK(j["seed"] == 7);
    CHECK(j["config"]["npft"]["beta"] == 0.5);
    CHECK(j.contains("code_version"));
    CHECK(j.contains("wall_seconds"));
    std::filesystem::remove_all(dir);
}

TEST_SUITE_END();
