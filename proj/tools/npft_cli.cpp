// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
//
// Pipeline driver: base training, noise-perturbation fine-tuning,
// quantization, perplexity evaluation, ablation sweeps, latency benchmarks
// and sensitivity reports, all from one JSON config.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "npft/common.hpp"
#include "npft/config.hpp"
#include "npft/data.hpp"
#include "npft/infer.hpp"
#include "npft/kernels.hpp"
#include "npft/model.hpp"
#include "npft/noise.hpp"
#include "npft/npft.hpp"
#include "npft/quant.hpp"
#include "npft/sensitivity.hpp"
#include "npft/train.hpp"

namespace fs = std::filesystem;
using namespace npft;

namespace {

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

CorpusSplits prepare_corpus(const ExperimentConfig& cfg) {
    if (!fs::exists(cfg.corpus.path)) {
        if (cfg.corpus.synthetic_bytes > 0) {
            fs::path p(cfg.corpus.path);
            if (p.has_parent_path()) fs::create_directories(p.parent_path());
            std::ofstream out(cfg.corpus.path, std::ios::binary);
            const std::string text =
                generate_synthetic_text(static_cast<size_t>(cfg.corpus.synthetic_bytes),
                                        derive_seed(cfg.seed, "corpus"));
            out << text;
        } else {
            throw ConfigError("corpus file not found: " + cfg.corpus.path);
        }
    }
    return load_corpus(cfg.corpus.path, cfg.corpus.split);
}

CalibrationSet prepare_calib(const ExperimentConfig& cfg, const CorpusSplits& splits) {
    return sample_calibration(splits.calib, cfg.calib.segments, cfg.calib.seq_len,
                              derive_seed(cfg.seed, "calib"));
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    out << text;
}

int cmd_train_base(const ExperimentConfig& cfg) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    CorpusSplits splits = prepare_corpus(cfg);

    ModelConfig mc = cfg.model;
    mc.seed = derive_seed(cfg.seed, "model");
    LanguageModel model(mc);

    BaseTrainConfig tc = cfg.train;
    tc.seed = derive_seed(cfg.seed, "train");
    std::vector<Tensor> params;
    for (const WeightId& id : model.weight_ids()) {
        model.weight(id).set_requires_grad(true);
        params.push_back(model.weight(id));
    }
    Adam opt(params, AdamConfig{.lr = tc.lr});
    BaseTrainResult res = train_base(model, splits.train, tc, 0, &opt);

    save_train_state(cfg.out_dir + "/base.ckpt", model, opt, tc.max_steps);
    {
        std::ofstream out(cfg.out_dir + "/train_log.csv");
        write_train_log_csv(res.log, out);
    }
    const double valid_ppl = model.perplexity(splits.valid.tokens, cfg.eval_window_batch).ppl;
    std::cout << "train-base: final loss " << res.final_loss << ", grad norm "
              << res.final_grad_norm << ", valid ppl " << valid_ppl << "\n";
    write_manifest(cfg.out_dir, "train-base", cfg, timer.seconds());
    return 0;
}

int cmd_npft(const ExperimentConfig& cfg, const std::string& checkpoint, bool control) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    CorpusSplits splits = prepare_corpus(cfg);
    CalibrationSet calib = prepare_calib(cfg, splits);

    LanguageModel base = LanguageModel::load(checkpoint);
    NpftConfig nc = cfg.npft;
    nc.seed = derive_seed(cfg.seed, "npft");
    if (control) nc.gamma = 0.0;  // no-noise LoRA control arm

    NpftResult res = npft_finetune(base, splits.train, calib, nc);
    res.model.save(cfg.out_dir + (control ? "/control.ckpt" : "/npft.ckpt"));
    {
        std::ofstream out(cfg.out_dir + "/npft_log.csv");
        res.log.write_csv(out);
    }
    {
        std::ofstream out(cfg.out_dir + "/npft_log.json");
        res.log.write_json(out);
    }
    save_fisher(res.fisher_pre, cfg.out_dir + "/fisher_pre.ckpt");
    save_fisher(res.fisher_post, cfg.out_dir + "/fisher_post.ckpt");
    {
        std::ofstream out(cfg.out_dir + "/mask_epoch0.csv");
        out << "weight_id,row,col\n";
        for (const auto& [id, positions] : res.epoch0_mask.positions)
            for (const auto& [r, c] : positions)
                out << to_string(id) << ',' << r << ',' << c << '\n';
    }
    std::cout << (control ? "npft(control)" : "npft") << ": steps "
              << res.log.steps.size() << ", initial grad norm " << res.log.initial_grad_norm
              << ", mask " << res.epoch0_mask.total_positions() << " positions\n";
    write_manifest(cfg.out_dir, control ? "npft-control" : "npft", cfg, timer.seconds());
    return 0;
}

int cmd_quantize(const ExperimentConfig& cfg, const std::string& checkpoint) {
    Timer timer;
    if (cfg.quant_arms.empty()) throw ConfigError("quantize: quant_arms is empty");
    fs::create_directories(cfg.out_dir);
    CorpusSplits splits = prepare_corpus(cfg);
    CalibrationSet calib = prepare_calib(cfg, splits);

    LanguageModel model = LanguageModel::load(checkpoint);
    bool needs_fisher = false;
    for (const QuantArm& arm : cfg.quant_arms)
        if (arm.q.scheme == QuantScheme::kmeans_nonuniform || arm.q.keep_outliers_fp)
            needs_fisher = true;
    FisherDiag fd;
    if (needs_fisher) fd = fisher_diag(model, calib, cfg.npft.fisher_batch_size);

    for (const QuantArm& arm : cfg.quant_arms) {
        QuantizedModel qm = quantize_model(model, arm.q, needs_fisher ? &fd : nullptr);
        save_quantized(qm, cfg.out_dir + "/quant_" + arm.name + ".qckpt");
        std::ofstream out(cfg.out_dir + "/bits_" + arm.name + ".csv");
        qm.bits.write_csv(out);
        std::cout << "quantize: arm " << arm.name << " avg bits " << qm.bits.average() << "\n";
    }
    write_manifest(cfg.out_dir, "quantize", cfg, timer.seconds());
    return 0;
}

int cmd_eval(const ExperimentConfig& cfg, const std::vector<std::string>& checkpoints) {
    Timer timer;
    if (checkpoints.empty()) throw ConfigError("eval: no checkpoints given");
    fs::create_directories(cfg.out_dir);
    CorpusSplits splits = prepare_corpus(cfg);

    std::ofstream csv(cfg.out_dir + "/eval.csv");
    csv << "checkpoint,ppl,avg_bits\n";
    nlohmann::json rows = nlohmann::json::array();
    for (const std::string& path : checkpoints) {
        double avg_bits = 64.0;
        LanguageModel model;
        try {
            QuantizedModel qm = load_quantized(path);
            avg_bits = qm.bits.average();
            model = std::move(qm.model);
        } catch (const std::exception&) {
            model = LanguageModel::load(path);
        }
        const double ppl = model.perplexity(splits.valid.tokens, cfg.eval_window_batch).ppl;
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%.6f,%.4f", ppl, avg_bits);
        csv << fs::path(path).filename().string() << ',' << buf << '\n';
        rows.push_back({{"checkpoint", fs::path(path).filename().string()},
                        {"ppl", ppl},
                        {"avg_bits", avg_bits}});
        std::cout << "eval: " << path << " ppl " << ppl << " avg_bits " << avg_bits << "\n";
    }
    std::ofstream js(cfg.out_dir + "/eval.json");
    js << rows.dump(2) << "\n";
    write_manifest(cfg.out_dir, "eval", cfg, timer.seconds());
    return 0;
}

// One sweep row: NPFT variant from the base checkpoint, then all quant arms.
struct SweepRow {
    std::string label;
    ExperimentConfig cfg;
};

int cmd_sweep(ExperimentConfig cfg, const std::string& axis, const std::string& checkpoint) {
    Timer timer;
    fs::create_directories(cfg.out_dir);
    CorpusSplits splits = prepare_corpus(cfg);
    CalibrationSet calib = prepare_calib(cfg, splits);

    LanguageModel base =
        checkpoint.empty() ? LanguageModel() : LanguageModel::load(checkpoint);
    if (checkpoint.empty()) {
        ModelConfig mc = cfg.model;
        mc.seed = derive_seed(cfg.seed, "model");
        LanguageModel fresh(mc);
        BaseTrainConfig tc = cfg.train;
        tc.seed = derive_seed(cfg.seed, "train");
        train_base(fresh, splits.train, tc);
        base = std::move(fresh);
    }

    std::vector<SweepRow> rows;
    auto push = [&](const std::string& label, auto&& mutate) {
        ExperimentConfig c = cfg;
        mutate(c.npft);
        rows.push_back({label, std::move(c)});
    };
    if (axis == "gamma") {
        for (double g : {0.0005, 0.005, 0.01, 0.02})
            push("gamma=" + std::to_string(g), [g](NpftConfig& n) { n.gamma = g; });
    } else if (axis == "beta") {
        for (double b : {0.0, 0.5})
            push("beta=" + std::to_string(b), [b](NpftConfig& n) { n.beta = b; });
    } else if (axis == "layers") {
        for (LayerSubset s : {LayerSubset::attn_only, LayerSubset::mlp_only, LayerSubset::all})
            push("layers=" + to_string(s), [s](NpftConfig& n) { n.layer_subset = s; });
    } else if (axis == "noise") {
        using D = NoiseDist;
        using A = NoiseAxis;
        const std::pair<D, A> variants[4] = {{D::uniform, A::output_channel},
                                             {D::gaussian, A::output_channel},
                                             {D::laplace, A::output_channel},
                                             {D::uniform, A::input_channel}};
        for (const auto& [d, a] : variants)
            push("noise=" + to_string(d) + "+" + to_string(a), [d, a](NpftConfig& n) {
                n.noise.dist = d;
                n.noise.axis = a;
            });
    } else {
        throw ConfigError("sweep: unknown axis " + axis + " (gamma|beta|layers|noise)");
    }

    std::ofstream csv(cfg.out_dir + "/sweep_" + axis + ".csv");
    csv << "label,seed,arm,ppl,avg_bits,config_hash\n";
    for (SweepRow& row : rows) {
        ExperimentConfig& c = row.cfg;
        c.out_dir = cfg.out_dir + "/" + row.label;
        fs::create_directories(c.out_dir);
        Timer row_timer;

        NpftConfig nc = c.npft;
        nc.seed = derive_seed(c.seed, "npft");
        NpftResult res = npft_finetune(base, splits.train, calib, nc);

        bool needs_fisher = false;
        for (const QuantArm& arm : c.quant_arms)
            if (arm.q.scheme == QuantScheme::kmeans_nonuniform || arm.q.keep_outliers_fp)
                needs_fisher = true;
        FisherDiag fd;
        if (needs_fisher) fd = fisher_diag(res.model, calib, nc.fisher_batch_size);

        for (const QuantArm& arm : c.quant_arms) {
            QuantizedModel qm = quantize_model(res.model, arm.q, needs_fisher ? &fd : nullptr);
            const double ppl =
                qm.model.perplexity(splits.valid.tokens, c.eval_window_batch).ppl;
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%.6f,%.4f", ppl, qm.bits.average());
            csv << row.label << ',' << nc.seed << ',' << arm.name << ',' << buf << ','
                << config_hash(c) << '\n';
            std::cout << "sweep " << row.label << " " << arm.name << ": ppl " << ppl << "\n";
        }
        write_manifest(c.out_dir, "sweep:" + row.label, c, row_timer.seconds());
    }
    write_manifest(cfg.out_dir, "sweep:" + axis, cfg, timer.seconds());
    return 0;
}

int cmd_bench(const ExperimentConfig& cfg, const std::string& checkpoint) {
    Timer timer;
    fs::create_directories(cfg.out_dir);

    LanguageModel model;
    if (!checkpoint.empty()) {
        model = LanguageModel::load(checkpoint);
    } else {
        ModelConfig mc = cfg.bench.has_model_override ? cfg.bench.model_override : cfg.model;
        mc.seed = derive_seed(cfg.seed, "bench-model");
        model = LanguageModel(mc);
    }

    // Latency only needs a plausible outlier mask; |w|^2 stands in for the
    // Fisher diagonal so synthetic runs need no calibration pass.
    FisherDiag proxy;
    for (const WeightId& id : model.block_weight_ids()) {
        Tensor f = model.weight(id).clone();
        for (double& x : f.mutable_data()) x = x * x;
        proxy.f.emplace(id, std::move(f));
    }
    proxy.n_batches = 1;

    QuantConfig qc;
    qc.bits = cfg.bench.bits;
    qc.keep_outliers_fp = cfg.bench.outlier_ratio > 0.0;
    qc.outlier_ratio = cfg.bench.outlier_ratio;
    QuantizedModel qm = quantize_model(model, qc, &proxy);

    const auto rows = bench_generate(qm, cfg.bench.n_tokens, cfg.bench.repeats, cfg.bench.arms,
                                     cfg.threads, config_hash(cfg));
    std::ofstream out(cfg.out_dir + "/bench.csv");
    write_bench_csv(rows, out);
    std::cout << "bench: " << rows.size() << " rows -> " << cfg.out_dir << "/bench.csv\n";
    write_manifest(cfg.out_dir, "bench", cfg, timer.seconds());
    return 0;
}

int cmd_report(const ExperimentConfig& cfg, const std::string& run_dir) {
    Timer timer;
    const std::string pre_path = run_dir + "/fisher_pre.ckpt";
    const std::string post_path = run_dir + "/fisher_post.ckpt";
    if (!fs::exists(pre_path) || !fs::exists(post_path))
        throw ConfigError("report: " + run_dir + " has no fisher_pre/fisher_post snapshots");
    FisherDiag pre = load_fisher(pre_path);
    FisherDiag post = load_fisher(post_path);

    fs::create_directories(cfg.out_dir);
    Rng rng(derive_seed(cfg.seed, "report"));
    for (const auto& [id, f] : pre.f) {
        if (id.name == WeightName::embed || id.name == WeightName::lm_head) continue;
        std::uniform_int_distribution<int> pick(0, static_cast<int>(f.cols()) - 1);
        const int channel = pick(rng);
        const std::string tag = to_string(id) + "_in" + std::to_string(channel);
        {
            std::ofstream out(cfg.out_dir + "/report_pre_" + tag + ".csv");
            write_fisher_csv(pre, id, out, channel);
        }
        if (post.f.count(id) != 0) {
            std::ofstream out(cfg.out_dir + "/report_post_" + tag + ".csv");
            write_fisher_csv(post, id, out, channel);
        }
    }
    std::cout << "report: sensitivity slices written to " << cfg.out_dir << "\n";
    write_manifest(cfg.out_dir, "report", cfg, timer.seconds());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"noise-perturbation fine-tuning lab"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_override;
    std::string checkpoint;
    std::string run_dir;
    std::string axis;
    std::vector<std::string> checkpoints;
    uint64_t seed_override = 0;
    bool has_seed_override = false;
    int threads = 0;
    bool deterministic = false;
    bool control = false;

    app.add_option("--config", config_path, "JSON experiment config")->required();
    app.add_option("--seed", seed_override, "override the global seed")
        ->each([&](const std::string&) { has_seed_override = true; });
    app.add_option("--out", out_override, "override the output directory");
    app.add_option("--threads", threads, "kernel thread count");
    app.add_flag("--deterministic", deterministic, "force single-thread kernels");

    auto* train_cmd = app.add_subcommand("train-base", "train the base model");
    auto* npft_cmd = app.add_subcommand("npft", "noise-perturbation fine-tuning");
    npft_cmd->add_option("--checkpoint", checkpoint, "base checkpoint")->required();
    npft_cmd->add_flag("--control", control, "no-noise LoRA control arm (gamma = 0)");
    auto* quant_cmd = app.add_subcommand("quantize", "quantize a checkpoint per config arms");
    quant_cmd->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    auto* eval_cmd = app.add_subcommand("eval", "perplexity of checkpoints on the valid split");
    eval_cmd->add_option("checkpoints", checkpoints, "checkpoints to evaluate")->required();
    auto* sweep_cmd = app.add_subcommand("sweep", "ablation grid over one axis");
    sweep_cmd->add_option("--axis", axis, "gamma|beta|layers|noise")->required();
    sweep_cmd->add_option("--checkpoint", checkpoint, "base checkpoint (trained if omitted)");
    auto* bench_cmd = app.add_subcommand("bench", "packed-kernel generation latency");
    bench_cmd->add_option("--checkpoint", checkpoint, "model checkpoint (synthetic if omitted)");
    auto* report_cmd = app.add_subcommand("report", "per-channel sensitivity CSVs pre/post");
    report_cmd->add_option("--run", run_dir, "npft run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        ExperimentConfig cfg = load_config(config_path);
        if (has_seed_override) cfg.seed = seed_override;
        if (!out_override.empty()) cfg.out_dir = out_override;
        if (threads > 0) cfg.threads = threads;
        if (deterministic) cfg.threads = 1;
        kernels::set_threads(cfg.threads);

        if (train_cmd->parsed()) return cmd_train_base(cfg);
        if (npft_cmd->parsed()) return cmd_npft(cfg, checkpoint, control);
        if (quant_cmd->parsed()) return cmd_quantize(cfg, checkpoint);
        if (eval_cmd->parsed()) return cmd_eval(cfg, checkpoints);
        if (sweep_cmd->parsed()) return cmd_sweep(cfg, axis, checkpoint);
        if (bench_cmd->parsed()) return cmd_bench(cfg, checkpoint);
        if (report_cmd->parsed()) return cmd_report(cfg, run_dir);
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
