// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/train.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "npft/common.hpp"

namespace npft {

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
    size_t total = 0;
    for (const Tensor& p : params_) {
        offsets_.push_back(total);
        total += static_cast<size_t>(p.size());
    }
    m_.assign(total, 0.0);
    v_.assign(total, 0.0);
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Tensor& p = params_[pi];
        auto g = p.grad();
        auto d = p.mutable_data();
        double* m = m_.data() + offsets_[pi];
        double* v = v_.data() + offsets_[pi];
        for (size_t i = 0; i < d.size(); ++i) {
            m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
            v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
            const double mh = m[i] / bc1;
            const double vh = v[i] / bc2;
            d[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

BaseTrainResult train_base(LanguageModel& model, const Corpus& train, const BaseTrainConfig& cfg,
                           int start_step, Adam* resume_opt) {
    const auto t0 = std::chrono::steady_clock::now();
    const int seq = cfg.seq_len > 0 ? cfg.seq_len : model.config().context_len;

    model.set_base_requires_grad(true);
    std::vector<Tensor> params;
    for (const WeightId& id : model.weight_ids()) params.push_back(model.weight(id));
    Adam local_opt(params, AdamConfig{.lr = cfg.lr});
    Adam& opt = resume_opt != nullptr ? *resume_opt : local_opt;

    BaseTrainResult res;
    double grad_norm_sq = 0.0;
    for (int step = start_step; step < cfg.max_steps; ++step) {
        Batch batch = sample_batch(train.tokens, cfg.batch_size, seq,
                                   derive_seed(cfg.seed, "base-batch", static_cast<uint64_t>(step)));
        opt.zero_grad();
        Tape tape;
        double loss_v;
        {
            TapeScope scope(tape);
            Tensor loss = model.forward_loss(batch);
            loss_v = loss.item();
            tape.backward(loss);
        }
        if (!std::isfinite(loss_v))
            throw NumericError("train_base: non-finite loss at step " +
                                     std::to_string(step));
        grad_norm_sq = 0.0;
        for (const Tensor& p : opt.params())
            for (double g : p.grad()) grad_norm_sq += g * g;
        opt.step();
        if (step % cfg.log_every == 0 || step + 1 == cfg.max_steps)
            res.log.push_back({step, loss_v});
        res.final_loss = loss_v;
    }
    res.final_grad_norm = std::sqrt(grad_norm_sq);
    model.set_base_requires_grad(false);
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

void save_train_state(const std::string& path, const LanguageModel& model, const Adam& opt,
                      int next_step) {
    const std::string tmp = path + ".model.tmp";
    model.save(tmp);
    auto blobs = read_blob_file(tmp);
    std::remove(tmp.c_str());

    auto push_f64 = [&](const std::string& name, const std::vector<double>& v) {
        NamedBlob b;
        b.name = name;
        b.dtype = BlobDtype::f64;
        b.shape = {static_cast<int64_t>(v.size())};
        b.bytes.resize(v.size() * sizeof(double));
        std::memcpy(b.bytes.data(), v.data(), b.bytes.size());
        blobs.push_back(std::move(b));
    };
    push_f64("__adam_m__", const_cast<Adam&>(opt).m());
    push_f64("__adam_v__", const_cast<Adam&>(opt).v());
    NamedBlob meta;
    meta.name = "__train_state__";
    meta.dtype = BlobDtype::u32;
    const uint32_t fields[2] = {static_cast<uint32_t>(next_step),
                                static_cast<uint32_t>(opt.t())};
    meta.shape = {2};
    meta.bytes.resize(sizeof(fields));
    std::memcpy(meta.bytes.data(), fields, sizeof(fields));
    blobs.push_back(std::move(meta));
    write_blob_file(path, blobs);
}

int load_train_state(const std::string& path, Adam& opt) {
    const auto blobs = read_blob_file(path);
    int next_step = -1;
    for (const auto& b : blobs) {
        if (b.name == "__adam_m__") {
            if (b.bytes.size() != opt.m().size() * sizeof(double))
                throw std::runtime_error("load_train_state: optimizer size mismatch");
            std::memcpy(opt.m().data(), b.bytes.data(), b.bytes.size());
        } else if (b.name == "__adam_v__") {
            std::memcpy(opt.v().data(), b.bytes.data(), b.bytes.size());
        } else if (b.name == "__train_state__") {
            uint32_t f[2];
            std::memcpy(f, b.bytes.data(), sizeof(f));
            next_step = static_cast<int>(f[0]);
            opt.set_t(static_cast<int64_t>(f[1]));
        }
    }
    if (next_step < 0) throw std::runtime_error("load_train_state: no training state in " + path);
    return next_step;
}

void write_train_log_csv(std::span<const BaseTrainLogRow> rows, std::ostream& out) {
    out << "step,loss\n";
    char buf[32];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9f", r.loss);
        out << r.step << ',' << buf << '\n';
    }
}

}  // namespace npft
