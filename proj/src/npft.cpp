// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/npft.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "npft/common.hpp"
#include "npft/train.hpp"

namespace npft {

void NpftConfig::validate() const {
    if (gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("NpftConfig: gamma must be in [0,1]");
    if (beta < 0.0) throw std::invalid_argument("NpftConfig: beta must be >= 0");
    if (epochs < 1) throw std::invalid_argument("NpftConfig: epochs must be >= 1");
    if (lora_rank < 1) throw std::invalid_argument("NpftConfig: lora_rank must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("NpftConfig: batch_size must be >= 1");
    noise.validate();
}

NpftObjective npft_objective(const LanguageModel& model, std::span<const Overlay> noise,
                             std::span<const LoraAdapter> adapters, const Batch& batch,
                             double beta) {
    NpftObjective obj;
    Tensor perturbed = model.forward_loss(batch, noise, adapters);
    obj.perturbed_value = perturbed.item();
    if (beta != 0.0) {
        Tensor base = model.forward_loss(batch, {}, adapters);
        obj.base_value = base.item();
        obj.total = add(perturbed, scale(base, beta));
    } else {
        // still report the base term for the logs, off the tape
        NoGradScope no_grad;
        obj.base_value = model.forward_loss(batch, {}, adapters).item();
        obj.total = perturbed;
    }
    obj.total_value = obj.total.item();
    return obj;
}

namespace {

double grad_norm_on_calib(const LanguageModel& base, const CalibrationSet& calib,
                          int batch_size) {
    LanguageModel work = base.clone();
    work.set_base_requires_grad(true);
    Batch b = batch_from_segments(calib.segments, 0,
                                  std::min<size_t>(calib.segments.size(),
                                                   static_cast<size_t>(batch_size)));
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = work.forward_loss(b);
        tape.backward(loss);
    }
    double sq = 0.0;
    for (const WeightId& id : work.weight_ids())
        for (double g : work.weight(id).grad()) sq += g * g;
    return std::sqrt(sq);
}

double mask_fisher_sum(const FisherDiag& fd, const OutlierMask& mask) {
    double s = 0.0;
    for (const auto& [id, positions] : mask.positions) {
        auto it = fd.f.find(id);
        if (it == fd.f.end()) continue;
        for (const auto& [r, c] : positions) s += it->second.at(r, c);
    }
    return s;
}

}  // namespace

NpftResult npft_finetune(const LanguageModel& base, const Corpus& train,
                         const CalibrationSet& calib, const NpftConfig& cfg) {
    (void)train;  // fine-tuning batches come from the calibration segments
    cfg.validate();
    if (calib.segments.empty())
        throw std::invalid_argument("npft_finetune: empty calibration set");

    NpftResult res;
    res.base_hash_before = base.weight_hash();
    res.log.initial_grad_norm = grad_norm_on_calib(base, calib, cfg.fisher_batch_size);

    LanguageModel model = base.clone();
    model.set_base_requires_grad(false);

    std::vector<LoraAdapter> adapters = make_lora_set(
        model, cfg.layer_subset, cfg.lora_rank, cfg.lora_alpha, derive_seed(cfg.seed, "lora"));
    std::vector<Tensor> lora_params;
    for (LoraAdapter& a : adapters) {
        lora_params.push_back(a.u);
        lora_params.push_back(a.v);
    }
    Adam opt(lora_params, AdamConfig{.lr = cfg.lr});

    res.fisher_pre = fisher_diag(model, calib, cfg.fisher_batch_size);

    const size_t n_segments = calib.segments.size();
    const size_t steps_per_epoch =
        (n_segments + static_cast<size_t>(cfg.batch_size) - 1) / static_cast<size_t>(cfg.batch_size);

    int global_step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();

        // refresh sensitivities at the current adapted weights
        FisherDiag fd = epoch == 0 ? res.fisher_pre
                                   : fisher_diag(model, calib, cfg.fisher_batch_size, adapters);
        OutlierMask mask = filter_outliers(restrict_fisher(fd, cfg.layer_subset), cfg.gamma);
        for (const auto& [id, positions] : mask.positions) {
            if (positions.empty() && cfg.gamma > 0.0)
                std::fprintf(stderr, "npft: empty mask for %s (gamma %.4g too small), skipping\n",
                             to_string(id).c_str(), cfg.gamma);
        }
        if (epoch == 0) res.epoch0_mask = mask;

        NoiseSpec spec = cfg.noise;
        spec.bits = cfg.noise.magnitude == NoiseMagnitude::quant_bin ? cfg.target_bits : spec.bits;
        spec.seed = derive_seed(cfg.seed, "noise-epoch", static_cast<uint64_t>(epoch));
        NoiseOverlay overlay = sample_noise(model, mask, spec);
        std::vector<Overlay> noise_overlays = apply_noise(overlay);

        // epoch shuffle of the calibration segments
        std::vector<size_t> order(n_segments);
        std::iota(order.begin(), order.end(), 0);
        {
            Rng rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(epoch)));
            std::shuffle(order.begin(), order.end(), rng);
        }

        for (size_t s = 0; s < steps_per_epoch; ++s) {
            if (cfg.resample_per_step && s > 0) {
                spec.seed = derive_seed(cfg.seed, "noise-step",
                                        static_cast<uint64_t>(epoch) * steps_per_epoch + s);
                overlay = sample_noise(model, mask, spec);
                noise_overlays = apply_noise(overlay);
            }
            Batch batch;
            batch.batch = 0;
            batch.seq = calib.seq_len - 1;
            for (size_t i = s * cfg.batch_size;
                 i < std::min(n_segments, (s + 1) * static_cast<size_t>(cfg.batch_size)); ++i) {
                const auto& seg = calib.segments[order[i]];
                batch.inputs.insert(batch.inputs.end(), seg.begin(), seg.end() - 1);
                batch.targets.insert(batch.targets.end(), seg.begin() + 1, seg.end());
                ++batch.batch;
            }

            opt.zero_grad();
            Tape tape;
            NpftObjective obj;
            {
                TapeScope scope(tape);
                obj = npft_objective(model, noise_overlays, adapters, batch, cfg.beta);
                if (!std::isfinite(obj.total_value))
                    throw NumericError("npft_finetune: non-finite loss at step " +
                                             std::to_string(global_step));
                tape.backward(obj.total);
            }
            opt.step();
            res.log.steps.push_back(
                {global_step, obj.total_value, obj.perturbed_value, obj.base_value});
            ++global_step;
        }

        NpftEpochLog el;
        el.epoch = epoch;
        el.mask_positions = mask.total_positions();
        el.fisher_mask_sum = mask_fisher_sum(fd, mask);
        double abs_sum = 0.0, abs_max = 0.0;
        int64_t n_nonzero = 0;
        for (const auto& [id, z] : overlay.z)
            for (double x : z.data())
                if (x != 0.0) {
                    abs_sum += std::abs(x);
                    abs_max = std::max(abs_max, std::abs(x));
                    ++n_nonzero;
                }
        el.noise_abs_mean = n_nonzero > 0 ? abs_sum / static_cast<double>(n_nonzero) : 0.0;
        el.noise_abs_max = abs_max;
        el.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        res.log.epochs.push_back(el);
    }

    res.base_hash_after_training = model.weight_hash();
    merge_lora(model, adapters);
    res.fisher_post = fisher_diag(model, calib, cfg.fisher_batch_size);
    res.model = std::move(model);
    return res;
}

void NpftTrainLog::write_csv(std::ostream& out) const {
    out << "step,total,perturbed_loss,base_loss\n";
    char buf[96];
    for (const NpftStepLog& s : steps) {
        std::snprintf(buf, sizeof(buf), "%d,%.9f,%.9f,%.9f", s.step, s.total, s.perturbed_loss,
                      s.base_loss);
        out << buf << '\n';
    }
}

void NpftTrainLog::write_json(std::ostream& out) const {
    char buf[320];
    out << "{\n  \"initial_grad_norm\": " << initial_grad_norm << ",\n  \"steps\": [";
    for (size_t i = 0; i < steps.size(); ++i) {
        const NpftStepLog& s = steps[i];
        std::snprintf(buf, sizeof(buf),
                      "%s\n    {\"step\": %d, \"total\": %.9f, \"perturbed_loss\": %.9f, "
                      "\"base_loss\": %.9f}",
                      i == 0 ? "" : ",", s.step, s.total, s.perturbed_loss, s.base_loss);
        out << buf;
    }
    out << "\n  ],\n  \"epochs\": [";
    for (size_t i = 0; i < epochs.size(); ++i) {
        const NpftEpochLog& e = epochs[i];
        std::snprintf(buf, sizeof(buf),
                      "%s\n    {\"epoch\": %d, \"mask_positions\": %lld, \"noise_abs_mean\": "
                      "%.9g, \"noise_abs_max\": %.9g, \"fisher_mask_sum\": %.9g, "
                      "\"wall_seconds\": %.3f}",
                      i == 0 ? "" : ",", e.epoch, static_cast<long long>(e.mask_positions),
                      e.noise_abs_mean, e.noise_abs_max, e.fisher_mask_sum, e.wall_seconds);
        out << buf;
    }
    out << "\n  ]\n}\n";
}

}  // namespace npft
