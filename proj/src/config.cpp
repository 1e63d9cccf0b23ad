// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/config.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>

#include "npft/common.hpp"

#ifndef NPFT_GIT_REV
#define NPFT_GIT_REV "unknown"
#endif

namespace npft {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
    if (!j.is_object()) throw ConfigError("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("config: unknown key \"" + it.key() + "\" in " + where);
    }
}

template <typename T>
void get_opt(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

template <typename E>
E parse_enum(const std::string& s, std::initializer_list<std::pair<const char*, E>> table,
             const std::string& where) {
    for (const auto& [name, v] : table)
        if (s == name) return v;
    throw ConfigError("config: bad value \"" + s + "\" for " + where);
}

QuantScheme parse_scheme(const std::string& s) {
    return parse_enum<QuantScheme>(s,
                                   {{"rtn", QuantScheme::rtn},
                                    {"kmeans", QuantScheme::kmeans_nonuniform},
                                    {"kmeans_nonuniform", QuantScheme::kmeans_nonuniform}},
                                   "quant scheme");
}

QuantGranularity parse_granularity(const std::string& s) {
    return parse_enum<QuantGranularity>(
        s,
        {{"per_output_channel", QuantGranularity::per_output_channel},
         {"per_tensor", QuantGranularity::per_tensor}},
        "quant granularity");
}

LayerSubset parse_subset(const std::string& s) {
    return parse_enum<LayerSubset>(s,
                                   {{"attn_only", LayerSubset::attn_only},
                                    {"mlp_only", LayerSubset::mlp_only},
                                    {"all", LayerSubset::all}},
                                   "layer_subset");
}

NoiseDist parse_dist(const std::string& s) {
    return parse_enum<NoiseDist>(s,
                                 {{"uniform", NoiseDist::uniform},
                                  {"gaussian", NoiseDist::gaussian},
                                  {"laplace", NoiseDist::laplace}},
                                 "noise dist");
}

NoiseAxis parse_axis(const std::string& s) {
    return parse_enum<NoiseAxis>(s,
                                 {{"output_channel", NoiseAxis::output_channel},
                                  {"input_channel", NoiseAxis::input_channel}},
                                 "noise axis");
}

NoiseMagnitude parse_magnitude(const std::string& s) {
    return parse_enum<NoiseMagnitude>(s,
                                      {{"channel_range", NoiseMagnitude::channel_range},
                                       {"quant_bin", NoiseMagnitude::quant_bin}},
                                      "noise magnitude");
}

MaskMode parse_mask_mode(const std::string& s) {
    return parse_enum<MaskMode>(s,
                                {{"outliers_only", MaskMode::outliers_only},
                                 {"whole_channel", MaskMode::whole_channel}},
                                "noise mask_mode");
}

BenchArm parse_arm(const std::string& s) {
    return parse_enum<BenchArm>(s,
                                {{"fp64_dense", BenchArm::fp64_dense},
                                 {"packed_uniform", BenchArm::packed_uniform},
                                 {"packed_sparse", BenchArm::packed_sparse}},
                                "bench arm");
}

ModelConfig parse_model(const json& j, const std::string& where) {
    check_keys(j, {"vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "context_len"}, where);
    ModelConfig m;
    get_opt(j, "vocab_size", m.vocab_size);
    get_opt(j, "d_model", m.d_model);
    get_opt(j, "n_layers", m.n_layers);
    get_opt(j, "n_heads", m.n_heads);
    get_opt(j, "d_ff", m.d_ff);
    get_opt(j, "context_len", m.context_len);
    return m;
}

NoiseSpec parse_noise(const json& j) {
    check_keys(j, {"dist", "axis", "magnitude", "bits", "mask_mode"}, "npft.noise");
    NoiseSpec n;
    if (j.contains("dist")) n.dist = parse_dist(j.at("dist").get<std::string>());
    if (j.contains("axis")) n.axis = parse_axis(j.at("axis").get<std::string>());
    if (j.contains("magnitude")) n.magnitude = parse_magnitude(j.at("magnitude").get<std::string>());
    get_opt(j, "bits", n.bits);
    if (j.contains("mask_mode")) n.mask_mode = parse_mask_mode(j.at("mask_mode").get<std::string>());
    return n;
}

QuantConfig parse_quant(const json& j, const std::string& where) {
    check_keys(j, {"name", "bits", "scheme", "granularity", "keep_outliers_fp", "outlier_ratio"},
               where);
    QuantConfig q;
    get_opt(j, "bits", q.bits);
    if (j.contains("scheme")) q.scheme = parse_scheme(j.at("scheme").get<std::string>());
    if (j.contains("granularity"))
        q.granularity = parse_granularity(j.at("granularity").get<std::string>());
    get_opt(j, "keep_outliers_fp", q.keep_outliers_fp);
    get_opt(j, "outlier_ratio", q.outlier_ratio);
    return q;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
    check_keys(j,
               {"seed", "out_dir", "threads", "corpus", "model", "train", "calib", "npft",
                "quant_arms", "eval", "bench"},
               "top level");
    ExperimentConfig c;
    get_opt(j, "seed", c.seed);
    get_opt(j, "out_dir", c.out_dir);
    get_opt(j, "threads", c.threads);

    if (j.contains("corpus")) {
        const json& cj = j.at("corpus");
        check_keys(cj, {"path", "split", "synthetic_bytes"}, "corpus");
        get_opt(cj, "path", c.corpus.path);
        if (cj.contains("split")) {
            const auto v = cj.at("split").get<std::vector<double>>();
            if (v.size() != 3) throw ConfigError("config: corpus.split needs 3 fractions");
            c.corpus.split = {v[0], v[1], v[2]};
        }
        get_opt(cj, "synthetic_bytes", c.corpus.synthetic_bytes);
    }
    if (j.contains("model")) c.model = parse_model(j.at("model"), "model");

    if (j.contains("train")) {
        const json& tj = j.at("train");
        check_keys(tj, {"max_steps", "batch_size", "seq_len", "lr", "log_every"}, "train");
        get_opt(tj, "max_steps", c.train.max_steps);
        get_opt(tj, "batch_size", c.train.batch_size);
        get_opt(tj, "seq_len", c.train.seq_len);
        get_opt(tj, "lr", c.train.lr);
        get_opt(tj, "log_every", c.train.log_every);
    }
    if (j.contains("calib")) {
        const json& cj = j.at("calib");
        check_keys(cj, {"segments", "seq_len"}, "calib");
        get_opt(cj, "segments", c.calib.segments);
        get_opt(cj, "seq_len", c.calib.seq_len);
    }
    if (j.contains("npft")) {
        const json& nj = j.at("npft");
        check_keys(nj,
                   {"gamma", "beta", "epochs", "lr", "lora_rank", "lora_alpha", "target_bits",
                    "batch_size", "layer_subset", "resample_per_step", "fisher_batch_size",
                    "noise"},
                   "npft");
        get_opt(nj, "gamma", c.npft.gamma);
        get_opt(nj, "beta", c.npft.beta);
        get_opt(nj, "epochs", c.npft.epochs);
        get_opt(nj, "lr", c.npft.lr);
        get_opt(nj, "lora_rank", c.npft.lora_rank);
        get_opt(nj, "lora_alpha", c.npft.lora_alpha);
        get_opt(nj, "target_bits", c.npft.target_bits);
        get_opt(nj, "batch_size", c.npft.batch_size);
        if (nj.contains("layer_subset"))
            c.npft.layer_subset = parse_subset(nj.at("layer_subset").get<std::string>());
        get_opt(nj, "resample_per_step", c.npft.resample_per_step);
        get_opt(nj, "fisher_batch_size", c.npft.fisher_batch_size);
        if (nj.contains("noise")) c.npft.noise = parse_noise(nj.at("noise"));
    }
    if (j.contains("quant_arms")) {
        for (const json& aj : j.at("quant_arms")) {
            QuantArm arm;
            arm.q = parse_quant(aj, "quant_arms[]");
            arm.name = aj.contains("name")
                           ? aj.at("name").get<std::string>()
                           : to_string(arm.q.scheme) + std::to_string(arm.q.bits);
            arm.q.validate();
            c.quant_arms.push_back(std::move(arm));
        }
    }
    if (j.contains("eval")) {
        const json& ej = j.at("eval");
        check_keys(ej, {"window_batch"}, "eval");
        get_opt(ej, "window_batch", c.eval_window_batch);
    }
    if (j.contains("bench")) {
        const json& bj = j.at("bench");
        check_keys(bj, {"n_tokens", "repeats", "arms", "bits", "outlier_ratio", "model"}, "bench");
        if (bj.contains("n_tokens")) c.bench.n_tokens = bj.at("n_tokens").get<std::vector<int>>();
        get_opt(bj, "repeats", c.bench.repeats);
        if (bj.contains("arms")) {
            c.bench.arms.clear();
            for (const auto& a : bj.at("arms"))
                c.bench.arms.push_back(parse_arm(a.get<std::string>()));
        }
        get_opt(bj, "bits", c.bench.bits);
        get_opt(bj, "outlier_ratio", c.bench.outlier_ratio);
        if (bj.contains("model")) {
            c.bench.has_model_override = true;
            c.bench.model_override = parse_model(bj.at("model"), "bench.model");
        }
    }

    try {
        c.model.validate();
        c.npft.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.is_open()) throw ConfigError("config: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config: parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

std::string to_string(QuantScheme s) {
    return s == QuantScheme::rtn ? "rtn" : "kmeans";
}
std::string to_string(QuantGranularity g) {
    return g == QuantGranularity::per_output_channel ? "per_output_channel" : "per_tensor";
}
std::string to_string(LayerSubset s) {
    switch (s) {
        case LayerSubset::attn_only: return "attn_only";
        case LayerSubset::mlp_only: return "mlp_only";
        case LayerSubset::all: return "all";
    }
    return "?";
}
std::string to_string(NoiseDist d) {
    switch (d) {
        case NoiseDist::uniform: return "uniform";
        case NoiseDist::gaussian: return "gaussian";
        case NoiseDist::laplace: return "laplace";
    }
    return "?";
}
std::string to_string(NoiseAxis a) {
    return a == NoiseAxis::output_channel ? "output_channel" : "input_channel";
}
std::string to_string(NoiseMagnitude m) {
    return m == NoiseMagnitude::channel_range ? "channel_range" : "quant_bin";
}
std::string to_string(MaskMode m) {
    return m == MaskMode::outliers_only ? "outliers_only" : "whole_channel";
}

json ExperimentConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["out_dir"] = out_dir;
    j["threads"] = threads;
    j["corpus"] = {{"path", corpus.path},
                   {"split", {corpus.split[0], corpus.split[1], corpus.split[2]}},
                   {"synthetic_bytes", corpus.synthetic_bytes}};
    j["model"] = {{"vocab_size", model.vocab_size}, {"d_model", model.d_model},
                  {"n_layers", model.n_layers},    {"n_heads", model.n_heads},
                  {"d_ff", model.d_ff},            {"context_len", model.context_len}};
    j["train"] = {{"max_steps", train.max_steps},
                  {"batch_size", train.batch_size},
                  {"seq_len", train.seq_len},
                  {"lr", train.lr},
                  {"log_every", train.log_every}};
    j["calib"] = {{"segments", calib.segments}, {"seq_len", calib.seq_len}};
    j["npft"] = {{"gamma", npft.gamma},
                 {"beta", npft.beta},
                 {"epochs", npft.epochs},
                 {"lr", npft.lr},
                 {"lora_rank", npft.lora_rank},
                 {"lora_alpha", npft.lora_alpha},
                 {"target_bits", npft.target_bits},
                 {"batch_size", npft.batch_size},
                 {"layer_subset", to_string(npft.layer_subset)},
                 {"resample_per_step", npft.resample_per_step},
                 {"fisher_batch_size", npft.fisher_batch_size},
                 {"noise",
                  {{"dist", to_string(npft.noise.dist)},
                   {"axis", to_string(npft.noise.axis)},
                   {"magnitude", to_string(npft.noise.magnitude)},
                   {"bits", npft.noise.bits},
                   {"mask_mode", to_string(npft.noise.mask_mode)}}}};
    j["quant_arms"] = json::array();
    for (const QuantArm& a : quant_arms)
        j["quant_arms"].push_back({{"name", a.name},
                                   {"bits", a.q.bits},
                                   {"scheme", to_string(a.q.scheme)},
                                   {"granularity", to_string(a.q.granularity)},
                                   {"keep_outliers_fp", a.q.keep_outliers_fp},
                                   {"outlier_ratio", a.q.outlier_ratio}});
    j["eval"] = {{"window_batch", eval_window_batch}};
    json arms = json::array();
    for (BenchArm a : bench.arms) arms.push_back(to_string(a));
    j["bench"] = {{"n_tokens", bench.n_tokens}, {"repeats", bench.repeats},
                  {"arms", arms},               {"bits", bench.bits},
                  {"outlier_ratio", bench.outlier_ratio}};
    if (bench.has_model_override)
        j["bench"]["model"] = {{"vocab_size", bench.model_override.vocab_size},
                               {"d_model", bench.model_override.d_model},
                               {"n_layers", bench.model_override.n_layers},
                               {"n_heads", bench.model_override.n_heads},
                               {"d_ff", bench.model_override.d_ff},
                               {"context_len", bench.model_override.context_len}};
    return j;
}

std::string config_hash(const ExperimentConfig& cfg) {
    const std::string s = cfg.to_json().dump();
    return hex_u64(fnv1a(s.data(), s.size()));
}

void write_manifest(const std::string& dir, const std::string& subcommand,
                    const ExperimentConfig& cfg, double wall_seconds) {
    std::filesystem::create_directories(dir);
    json j;
    j["subcommand"] = subcommand;
    j["config"] = cfg.to_json();
    j["config_hash"] = config_hash(cfg);
    j["seed"] = cfg.seed;
    j["threads"] = cfg.threads;
    j["code_version"] = NPFT_GIT_REV;
    j["wall_seconds"] = wall_seconds;
    j["timestamp_unix"] =
        std::chrono::duration_cast<std::chrono::seconds>(
            std::chrono::system_clock::now().time_since_epoch())
            .count();
    std::ofstream out(dir + "/manifest.json");
    out << j.dump(2) << "\n";
}

}  // namespace npft
