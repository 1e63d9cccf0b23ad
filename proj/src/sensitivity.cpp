// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <random>
#include <stdexcept>

#include "npft/common.hpp"
#include "npft/quant.hpp"

namespace npft {

FisherDiag fisher_diag(const LanguageModel& model, const CalibrationSet& calib, int batch_size,
                       std::span<const LoraAdapter> adapters) {
    if (calib.segments.empty()) throw std::invalid_argument("fisher_diag: empty calibration set");
    if (batch_size <= 0) throw std::invalid_argument("fisher_diag: batch_size must be > 0");

    // Gradients are taken at the effective weights: dL/dW of L(W + delta)
    // equals the gradient at the effective point, so attaching the adapters
    // as a fixed constant overlay gives the Fisher of the adapted model.
    std::vector<Overlay> adapter_overlays;
    for (const LoraAdapter& a : adapters) {
        Tensor delta = matmul_tn(a.u, a.v);
        for (double& x : delta.mutable_data()) x *= a.scaling();
        adapter_overlays.push_back({a.target, delta});
    }

    LanguageModel work = model.clone();
    work.set_base_requires_grad(true);

    FisherDiag fd;
    for (const WeightId& id : work.weight_ids())
        fd.f.emplace(id, Tensor::zeros(work.weight(id).shape()));

    const size_t n = calib.segments.size();
    for (size_t first = 0; first < n; first += static_cast<size_t>(batch_size)) {
        const size_t count = std::min(static_cast<size_t>(batch_size), n - first);
        Batch batch = batch_from_segments(calib.segments, first, count);
        work.zero_grads();
        Tape tape;
        {
            TapeScope scope(tape);
            Tensor loss = work.forward_loss(batch, adapter_overlays);
            tape.backward(loss);
        }
        for (const WeightId& id : work.weight_ids()) {
            auto g = work.weight(id).grad();
            auto f = fd.f.at(id).mutable_data();
            for (size_t i = 0; i < f.size(); ++i) f[i] += g[i] * g[i];
        }
        ++fd.n_batches;
    }
    for (auto& [id, f] : fd.f)
        for (double& x : f.mutable_data()) x /= static_cast<double>(fd.n_batches);
    return fd;
}

FisherDiag restrict_fisher(const FisherDiag& fd, LayerSubset subset) {
    FisherDiag out;
    out.n_batches = fd.n_batches;
    for (const auto& [id, f] : fd.f)
        if (in_subset(id, subset)) out.f.emplace(id, f);
    return out;
}

int64_t OutlierMask::total_positions() const {
    int64_t n = 0;
    for (const auto& [id, pos] : positions) n += static_cast<int64_t>(pos.size());
    return n;
}

std::vector<std::pair<int, int>> top_positions(const Tensor& f, int64_t k) {
    const int64_t rows = f.rows(), cols = f.cols();
    k = std::clamp<int64_t>(k, 0, rows * cols);
    if (k == 0) return {};
    std::vector<int64_t> idx(static_cast<size_t>(rows * cols));
    std::iota(idx.begin(), idx.end(), 0);
    auto fd = f.data();
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (fd[a] != fd[b]) return fd[a] > fd[b];
        return a < b;  // (row, col) lexicographic on row-major index
    });
    std::vector<std::pair<int, int>> out;
    out.reserve(static_cast<size_t>(k));
    for (int64_t i = 0; i < k; ++i)
        out.emplace_back(static_cast<int>(idx[i] / cols), static_cast<int>(idx[i] % cols));
    std::sort(out.begin(), out.end());
    return out;
}

OutlierMask filter_outliers(const FisherDiag& fd, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("filter_outliers: gamma must be in [0,1]");
    OutlierMask mask;
    mask.ratio = gamma;
    for (const auto& [id, f] : fd.f) {
        const auto k = static_cast<int64_t>(std::llround(gamma * static_cast<double>(f.size())));
        auto pos = top_positions(f, k);
        if (!pos.empty()) mask.positions.emplace(id, std::move(pos));
        else mask.positions.emplace(id, std::vector<std::pair<int, int>>{});
    }
    return mask;
}

double calibration_loss(const LanguageModel& model, const CalibrationSet& calib,
                        std::span<const Overlay> overlays,
                        std::span<const LoraAdapter> adapters) {
    if (calib.segments.empty())
        throw std::invalid_argument("calibration_loss: empty calibration set");
    NoGradScope no_grad;
    double total = 0.0;
    int64_t tokens = 0;
    const size_t batch_size = 8;
    for (size_t first = 0; first < calib.segments.size(); first += batch_size) {
        const size_t count = std::min(batch_size, calib.segments.size() - first);
        Batch b = batch_from_segments(calib.segments, first, count);
        total += model.forward_loss(b, overlays, adapters).item() *
                 static_cast<double>(b.inputs.size());
        tokens += static_cast<int64_t>(b.inputs.size());
    }
    return total / static_cast<double>(tokens);
}

double exact_sensitivity(const LanguageModel& model, const CalibrationSet& calib,
                         const WeightId& id, int row, int col, const QuantConfig& qcfg,
                         std::optional<double> base_loss) {
    const Tensor& w = model.weight(id);
    if (row < 0 || row >= w.rows() || col < 0 || col >= w.cols())
        throw std::out_of_range("exact_sensitivity: position out of range");
    if (qcfg.scheme != QuantScheme::rtn)
        throw std::invalid_argument("exact_sensitivity: only the rtn scheme is supported");

    const QuantizedMatrix q = rtn_quantize(w, qcfg);
    const double quantized = q.dequant_code(row, col);
    const double original = w.at(row, col);

    const double l0 = base_loss ? *base_loss : calibration_loss(model, calib);
    if (quantized == original) return 0.0;

    Overlay o{id, Tensor::zeros(w.shape())};
    o.values.at(row, col) = quantized - original;
    const Overlay ovs[1] = {o};
    const double l1 = calibration_loss(model, calib, ovs);
    return l1 - l0;
}

TraceEstimate hutchinson_trace(
    const std::function<void(std::span<const double>, std::span<double>)>& matvec, int dim,
    int n_samples, ProbeDist dist, uint64_t seed) {
    if (dim <= 0) throw std::invalid_argument("hutchinson_trace: dim must be > 0");
    if (n_samples < 1) throw std::invalid_argument("hutchinson_trace: n_samples must be >= 1");

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<int> sign(0, 1);
    std::vector<double> z(static_cast<size_t>(dim)), hz(static_cast<size_t>(dim));

    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        for (double& x : z)
            x = dist == ProbeDist::rademacher ? (sign(rng) == 0 ? -1.0 : 1.0) : gauss(rng);
        std::fill(hz.begin(), hz.end(), 0.0);
        matvec(z, hz);
        double quad = 0.0;
        for (int i = 0; i < dim; ++i) quad += z[static_cast<size_t>(i)] * hz[static_cast<size_t>(i)];
        sum += quad;
        sum_sq += quad * quad;
    }

    TraceEstimate est;
    est.n_samples = n_samples;
    est.value = sum / n_samples;
    if (n_samples > 1) {
        const double var =
            std::max(0.0, (sum_sq - sum * sum / n_samples) / static_cast<double>(n_samples - 1));
        est.std_error = std::sqrt(var / n_samples);
    }
    return est;
}

PerturbationTrace perturbation_trace_fn(
    const std::function<double(std::span<const double>)>& loss_plus, int dim, double delta,
    int n_samples, uint64_t seed) {
    if (delta <= 0.0) throw std::invalid_argument("perturbation_trace: delta must be > 0");
    if (n_samples < 1) throw std::invalid_argument("perturbation_trace: n_samples must be >= 1");

    std::vector<double> z(static_cast<size_t>(dim), 0.0);
    const double base = loss_plus(z);

    Rng rng(seed);
    std::uniform_real_distribution<double> u(-delta / 2.0, delta / 2.0);
    double sum = 0.0, sum_sq = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        for (double& x : z) x = u(rng);
        const double d = loss_plus(z) - base;
        sum += d;
        sum_sq += d * d;
    }

    // E[dL] = (delta^2/24) Tr(H) for Cov(z) = (delta^2/12) I
    const double rescale = 24.0 / (delta * delta);
    PerturbationTrace out;
    out.mean_loss_increase = sum / n_samples;
    out.trace.n_samples = n_samples;
    out.trace.value = out.mean_loss_increase * rescale;
    if (n_samples > 1) {
        const double var =
            std::max(0.0, (sum_sq - sum * sum / n_samples) / static_cast<double>(n_samples - 1));
        out.trace.std_error = std::sqrt(var / n_samples) * rescale;
    }
    return out;
}

PerturbationTrace perturbation_trace(const LanguageModel& model, const CalibrationSet& calib,
                                     const OutlierMask* mask, double delta, int n_samples,
                                     uint64_t seed) {
    // flatten the perturbed coordinates: mask positions, or every block weight
    struct Coord {
        WeightId id;
        int row, col;
    };
    std::vector<Coord> coords;
    if (mask != nullptr) {
        for (const auto& [id, pos] : mask->positions)
            for (const auto& [r, c] : pos) coords.push_back({id, r, c});
    } else {
        for (const WeightId& id : model.block_weight_ids()) {
            const Tensor& w = model.weight(id);
            for (int r = 0; r < w.rows(); ++r)
                for (int c = 0; c < w.cols(); ++c) coords.push_back({id, r, c});
        }
    }
    if (coords.empty()) throw std::invalid_argument("perturbation_trace: empty support");

    std::map<WeightId, Tensor> zmats;
    auto loss_plus = [&](std::span<const double> z) {
        for (auto& [id, m] : zmats)
            std::fill(m.mutable_data().begin(), m.mutable_data().end(), 0.0);
        for (size_t i = 0; i < coords.size(); ++i) {
            const Coord& c = coords[i];
            auto it = zmats.find(c.id);
            if (it == zmats.end())
                it = zmats.emplace(c.id, Tensor::zeros(model.weight(c.id).shape())).first;
            it->second.at(c.row, c.col) = z[i];
        }
        std::vector<Overlay> overlays;
        overlays.reserve(zmats.size());
        for (auto& [id, m] : zmats) overlays.push_back({id, m});
        return calibration_loss(model, calib, overlays);
    };
    return perturbation_trace_fn(loss_plus, static_cast<int>(coords.size()), delta, n_samples,
                                 seed);
}

std::vector<double> sensitivity_report(const FisherDiag& fd, const WeightId& id,
                                       int input_channel) {
    const Tensor& f = fd.f.at(id);
    if (input_channel < 0 || input_channel >= f.cols())
        throw std::out_of_range("sensitivity_report: invalid channel index");
    std::vector<double> out(static_cast<size_t>(f.rows()));
    for (int64_t r = 0; r < f.rows(); ++r) out[static_cast<size_t>(r)] = f.at(r, input_channel);
    return out;
}

void save_fisher(const FisherDiag& fd, const std::string& path) {
    std::vector<NamedBlob> blobs;
    NamedBlob meta;
    meta.name = "__fisher_meta__";
    meta.dtype = BlobDtype::u32;
    meta.shape = {1};
    meta.bytes.resize(4);
    const uint32_t nb = static_cast<uint32_t>(fd.n_batches);
    std::memcpy(meta.bytes.data(), &nb, 4);
    blobs.push_back(std::move(meta));
    for (const auto& [id, f] : fd.f) blobs.push_back(blob_from_tensor(to_string(id), f));
    write_blob_file(path, blobs);
}

FisherDiag load_fisher(const std::string& path) {
    FisherDiag fd;
    for (const auto& b : read_blob_file(path)) {
        if (b.name == "__fisher_meta__") {
            uint32_t nb;
            std::memcpy(&nb, b.bytes.data(), 4);
            fd.n_batches = static_cast<int>(nb);
        } else {
            fd.f.emplace(parse_weight_id(b.name), tensor_from_blob(b));
        }
    }
    return fd;
}

void write_fisher_csv(const FisherDiag& fd, const WeightId& id, std::ostream& out,
                      int input_channel) {
    const Tensor& f = fd.f.at(id);
    // global rank within the matrix, 1 = largest, ties by position
    std::vector<int64_t> idx(static_cast<size_t>(f.size()));
    std::iota(idx.begin(), idx.end(), 0);
    auto data = f.data();
    std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
        if (data[a] != data[b]) return data[a] > data[b];
        return a < b;
    });
    std::vector<int64_t> rank(idx.size());
    for (size_t i = 0; i < idx.size(); ++i) rank[static_cast<size_t>(idx[i])] = static_cast<int64_t>(i) + 1;

    const std::string name = to_string(id);
    out << "weight_id,row,col,fisher,rank\n";
    char buf[64];
    for (int64_t r = 0; r < f.rows(); ++r) {
        for (int64_t c = 0; c < f.cols(); ++c) {
            if (input_channel >= 0 && c != input_channel) continue;
            const int64_t flat = r * f.cols() + c;
            std::snprintf(buf, sizeof(buf), "%.17g", data[flat]);
            out << name << ',' << r << ',' << c << ',' << buf << ',' << rank[static_cast<size_t>(flat)]
                << '\n';
        }
    }
}

}  // namespace npft
