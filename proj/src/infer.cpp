// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <ostream>
#include <stdexcept>

#include "npft/kernels.hpp"

namespace npft {

std::vector<uint8_t> pack_codes(std::span<const uint8_t> codes, int bits) {
    if (bits < 2 || bits > 8) throw std::invalid_argument("pack_codes: bits must be in [2,8]");
    std::vector<uint8_t> out((codes.size() * bits + 7) / 8, 0);
    size_t bitpos = 0;
    for (uint8_t code : codes) {
        const uint32_t value = code & ((1u << bits) - 1u);
        const size_t byte = bitpos >> 3;
        const unsigned shift = bitpos & 7u;
        out[byte] |= static_cast<uint8_t>(value << shift);
        if (shift + bits > 8) out[byte + 1] |= static_cast<uint8_t>(value >> (8 - shift));
        bitpos += static_cast<size_t>(bits);
    }
    return out;
}

std::vector<uint8_t> unpack_codes(std::span<const uint8_t> packed, int bits, size_t n_codes) {
    if (bits < 2 || bits > 8) throw std::invalid_argument("unpack_codes: bits must be in [2,8]");
    if (packed.size() < (n_codes * bits + 7) / 8)
        throw std::invalid_argument("unpack_codes: packed stream too short");
    std::vector<uint8_t> out(n_codes);
    size_t bitpos = 0;
    const uint32_t mask = (1u << bits) - 1u;
    for (size_t i = 0; i < n_codes; ++i) {
        const size_t byte = bitpos >> 3;
        const unsigned shift = bitpos & 7u;
        uint32_t v = packed[byte] >> shift;
        if (shift + bits > 8) v |= static_cast<uint32_t>(packed[byte + 1]) << (8 - shift);
        out[i] = static_cast<uint8_t>(v & mask);
        bitpos += static_cast<size_t>(bits);
    }
    return out;
}

double PackedMatrix::dequant_code(int row, uint8_t code) const {
    const int g = per_tensor ? 0 : row;
    if (scheme == QuantScheme::rtn)
        return zero_points[static_cast<size_t>(g)] + code * scales[static_cast<size_t>(g)];
    return codebooks[static_cast<size_t>(g) * (1 << bits) + code];
}

PackedMatrix pack_matrix(const QuantizedMatrix& q) {
    PackedMatrix p;
    p.bits = q.bits;
    p.scheme = q.scheme;
    p.rows = q.rows;
    p.cols = q.cols;
    p.packed = pack_codes(q.codes, q.bits);
    p.scales = q.scales;
    p.zero_points = q.zero_points;
    p.codebooks = q.codebooks;
    p.per_tensor = q.granularity == QuantGranularity::per_tensor;
    return p;
}

Tensor dequantize(const PackedMatrix& p) {
    const auto codes = unpack_codes(p.packed, p.bits, static_cast<size_t>(p.rows) * p.cols);
    Tensor out = Tensor::zeros({p.rows, p.cols});
    auto d = out.mutable_data();
    for (int r = 0; r < p.rows; ++r)
        for (int c = 0; c < p.cols; ++c)
            d[static_cast<size_t>(r) * p.cols + c] =
                p.dequant_code(r, codes[static_cast<size_t>(r) * p.cols + c]);
    return out;
}

void SparseOutlierMatrix::validate() const {
    for (size_t i = 0; i < entries.size(); ++i) {
        const SparseEntry& e = entries[i];
        if (e.row < 0 || e.row >= rows || e.col < 0 || e.col >= cols)
            throw std::invalid_argument("SparseOutlierMatrix: entry out of range");
        if (i > 0) {
            const SparseEntry& prev = entries[i - 1];
            if (std::pair(prev.row, prev.col) >= std::pair(e.row, e.col))
                throw std::invalid_argument("SparseOutlierMatrix: entries not strictly sorted");
        }
    }
}

SparseOutlierMatrix sparse_from_quantized(const QuantizedMatrix& q) {
    SparseOutlierMatrix s;
    s.rows = q.rows;
    s.cols = q.cols;
    s.entries = q.sparse_outliers;
    s.validate();
    return s;
}

void packed_matvec(const PackedMatrix& p, std::span<const double> x, std::span<double> y) {
    if (static_cast<int>(x.size()) != p.cols || static_cast<int>(y.size()) != p.rows)
        throw std::invalid_argument("packed_matvec: shape mismatch");
    const int bits = p.bits;
    const uint32_t mask = (1u << bits) - 1u;
    const int nt = kernels::threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && p.rows > 1)
    for (int r = 0; r < p.rows; ++r) {
        size_t bitpos = static_cast<size_t>(r) * p.cols * bits;
        double acc_code = 0.0;  // sum code[c] * x[c]
        double acc_x = 0.0;     // sum x[c], for the affine zero-point term
        if (p.scheme == QuantScheme::rtn) {
            for (int c = 0; c < p.cols; ++c) {
                const size_t byte = bitpos >> 3;
                const unsigned shift = bitpos & 7u;
                uint32_t v = p.packed[byte] >> shift;
                if (shift + bits > 8) v |= static_cast<uint32_t>(p.packed[byte + 1]) << (8 - shift);
                acc_code += static_cast<double>(v & mask) * x[c];
                acc_x += x[c];
                bitpos += static_cast<size_t>(bits);
            }
            const int g = p.per_tensor ? 0 : r;
            y[r] = p.scales[static_cast<size_t>(g)] * acc_code +
                   p.zero_points[static_cast<size_t>(g)] * acc_x;
        } else {
            const double* cb =
                p.codebooks.data() + static_cast<size_t>(p.per_tensor ? 0 : r) * (1 << bits);
            for (int c = 0; c < p.cols; ++c) {
                const size_t byte = bitpos >> 3;
                const unsigned shift = bitpos & 7u;
                uint32_t v = p.packed[byte] >> shift;
                if (shift + bits > 8) v |= static_cast<uint32_t>(p.packed[byte + 1]) << (8 - shift);
                acc_code += cb[v & mask] * x[c];
                bitpos += static_cast<size_t>(bits);
            }
            y[r] = acc_code;
        }
    }
}

namespace ref {
void packed_matvec(const PackedMatrix& p, std::span<const double> x, std::span<double> y) {
    const Tensor w = dequantize(p);
    kernels::ref::matvec(w.data().data(), x.data(), y.data(), p.rows, p.cols);
}
}  // namespace ref

void mixed_matvec(const PackedMatrix& p, const SparseOutlierMatrix& s, std::span<const double> x,
                  std::span<double> y) {
    if (s.rows != p.rows || s.cols != p.cols)
        throw std::invalid_argument("mixed_matvec: sparse shape mismatch");
    s.validate();
    packed_matvec(p, x, y);
    // subtract the dense placeholder, add back the stored original
    const int bits = p.bits;
    const uint32_t mask = (1u << bits) - 1u;
    for (const SparseEntry& e : s.entries) {
        const size_t bitpos = (static_cast<size_t>(e.row) * p.cols + e.col) * bits;
        const size_t byte = bitpos >> 3;
        const unsigned shift = bitpos & 7u;
        uint32_t v = p.packed[byte] >> shift;
        if (shift + bits > 8) v |= static_cast<uint32_t>(p.packed[byte + 1]) << (8 - shift);
        const double dense_val = p.dequant_code(e.row, static_cast<uint8_t>(v & mask));
        y[e.row] += (e.value - dense_val) * x[e.col];
    }
}

// ---- generation harness ----

std::string to_string(BenchArm arm) {
    switch (arm) {
        case BenchArm::fp64_dense: return "fp64_dense";
        case BenchArm::packed_uniform: return "packed_uniform";
        case BenchArm::packed_sparse: return "packed_sparse";
    }
    return "?";
}

namespace {

Tensor sinusoidal(int context_len, int d_model) {
    Tensor pe = Tensor::zeros({context_len, d_model});
    auto d = pe.mutable_data();
    for (int t = 0; t < context_len; ++t)
        for (int j = 0; j < d_model / 2; ++j) {
            const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(d_model));
            d[static_cast<size_t>(t) * d_model + 2 * j] = std::sin(t * freq);
            d[static_cast<size_t>(t) * d_model + 2 * j + 1] = std::cos(t * freq);
        }
    return pe;
}

void layer_norm_vec(std::span<double> x) {
    double mu = 0.0;
    for (double v : x) mu += v;
    mu /= static_cast<double>(x.size());
    double var = 0.0;
    for (double v : x) var += (v - mu) * (v - mu);
    var /= static_cast<double>(x.size());
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (double& v : x) v = (v - mu) * inv;
}

}  // namespace

InferenceEngine::InferenceEngine(const QuantizedModel& qm, BenchArm arm)
    : cfg_(qm.model.config()), arm_(arm) {
    pos_encoding_ = sinusoidal(cfg_.context_len, cfg_.d_model);
    for (const WeightId& id : qm.model.weight_ids()) {
        const bool quantized = qm.matrices.count(id) != 0;
        if (!quantized || arm == BenchArm::fp64_dense) {
            // fp arm reconstructs from the quantized model view so all arms
            // compute over the same shapes
            dense_.emplace(id, qm.model.weight(id).clone());
            continue;
        }
        const QuantizedMatrix& q = qm.matrices.at(id);
        packed_.emplace(id, pack_matrix(q));
        if (arm == BenchArm::packed_sparse) sparse_.emplace(id, sparse_from_quantized(q));
    }
}

void InferenceEngine::matvec_weight(const WeightId& id, std::span<const double> x,
                                    std::span<double> y) const {
    auto pit = packed_.find(id);
    if (pit == packed_.end()) {
        const Tensor& w = dense_.at(id);
        kernels::matvec(w.data().data(), x.data(), y.data(), static_cast<int>(w.rows()),
                        static_cast<int>(w.cols()));
        return;
    }
    if (arm_ == BenchArm::packed_sparse) {
        mixed_matvec(pit->second, sparse_.at(id), x, y);
    } else {
        packed_matvec(pit->second, x, y);
    }
}

std::vector<int> InferenceEngine::generate(int start_token, int n_tokens) {
    const int d = cfg_.d_model;
    const int heads = cfg_.n_heads;
    const int dh = d / heads;
    const int ctx = cfg_.context_len;
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    // rolling KV cache: [layer][slot][d]
    std::vector<std::vector<double>> kcache(
        static_cast<size_t>(cfg_.n_layers),
        std::vector<double>(static_cast<size_t>(ctx) * d, 0.0));
    auto vcache = kcache;

    std::vector<double> x(static_cast<size_t>(d)), h(static_cast<size_t>(d)),
        q(static_cast<size_t>(d)), k(static_cast<size_t>(d)), v(static_cast<size_t>(d)),
        attn(static_cast<size_t>(d)), proj(static_cast<size_t>(d)),
        ff(static_cast<size_t>(cfg_.d_ff)), logits(static_cast<size_t>(cfg_.vocab_size));
    std::vector<double> weights(static_cast<size_t>(ctx));

    const Tensor& embed = dense_.at({-1, WeightName::embed});
    const Tensor& lm_head = dense_.at({-1, WeightName::lm_head});

    std::vector<int> out;
    out.reserve(static_cast<size_t>(n_tokens));
    int token = start_token;
    for (int step = 0; step < n_tokens; ++step) {
        const int pos = std::min(step, ctx - 1);
        const int slot = step % ctx;
        const int n_ctx = std::min(step + 1, ctx);

        const double* erow = embed.data().data() + static_cast<size_t>(token) * d;
        const double* prow = pos_encoding_.data().data() + static_cast<size_t>(pos) * d;
        for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] = erow[j] + prow[j];

        for (int l = 0; l < cfg_.n_layers; ++l) {
            std::copy(x.begin(), x.end(), h.begin());
            layer_norm_vec(h);
            matvec_weight({l, WeightName::attn_q}, h, q);
            matvec_weight({l, WeightName::attn_k}, h, k);
            matvec_weight({l, WeightName::attn_v}, h, v);
            std::copy(k.begin(), k.end(), kcache[static_cast<size_t>(l)].begin() +
                                              static_cast<size_t>(slot) * d);
            std::copy(v.begin(), v.end(), vcache[static_cast<size_t>(l)].begin() +
                                              static_cast<size_t>(slot) * d);

            std::fill(attn.begin(), attn.end(), 0.0);
            for (int hh = 0; hh < heads; ++hh) {
                const int off = hh * dh;
                double maxs = -1e300;
                for (int u = 0; u < n_ctx; ++u) {
                    const double* krow =
                        kcache[static_cast<size_t>(l)].data() + static_cast<size_t>(u) * d + off;
                    double s = 0.0;
                    for (int j = 0; j < dh; ++j) s += q[static_cast<size_t>(off + j)] * krow[j];
                    s *= scl;
                    weights[static_cast<size_t>(u)] = s;
                    maxs = std::max(maxs, s);
                }
                double denom = 0.0;
                for (int u = 0; u < n_ctx; ++u) {
                    const double e = std::exp(weights[static_cast<size_t>(u)] - maxs);
                    weights[static_cast<size_t>(u)] = e;
                    denom += e;
                }
                for (int u = 0; u < n_ctx; ++u) {
                    const double w = weights[static_cast<size_t>(u)] / denom;
                    const double* vrow =
                        vcache[static_cast<size_t>(l)].data() + static_cast<size_t>(u) * d + off;
                    for (int j = 0; j < dh; ++j) attn[static_cast<size_t>(off + j)] += w * vrow[j];
                }
            }
            matvec_weight({l, WeightName::attn_o}, attn, proj);
            for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];

            std::copy(x.begin(), x.end(), h.begin());
            layer_norm_vec(h);
            matvec_weight({l, WeightName::mlp_in}, h, ff);
            for (double& u : ff) u = 0.5 * u * (1.0 + std::erf(u * 0.70710678118654752440));
            matvec_weight({l, WeightName::mlp_out}, ff, proj);
            for (int j = 0; j < d; ++j) x[static_cast<size_t>(j)] += proj[static_cast<size_t>(j)];
        }

        std::copy(x.begin(), x.end(), h.begin());
        layer_norm_vec(h);
        kernels::matvec(lm_head.data().data(), h.data(), logits.data(), cfg_.vocab_size, d);
        token = static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
        out.push_back(token);
    }
    return out;
}

std::vector<BenchRow> bench_generate(const QuantizedModel& qm, std::span<const int> n_tokens_list,
                                     int repeats, std::span<const BenchArm> arms, int threads,
                                     const std::string& config_hash) {
    if (repeats < 1) throw std::invalid_argument("bench_generate: repeats must be >= 1");
    const int prev_threads = kernels::threads();
    kernels::set_threads(threads);

    std::vector<BenchRow> rows;
    for (BenchArm arm : arms) {
        InferenceEngine engine(qm, arm);
        engine.generate(0, 8);  // warm-up
        for (int n_tokens : n_tokens_list) {
            for (int rep = 0; rep < repeats; ++rep) {
                const auto t0 = std::chrono::steady_clock::now();
                engine.generate(0, n_tokens);
                const auto t1 = std::chrono::steady_clock::now();
                BenchRow row;
                row.arm = to_string(arm);
                row.bits = qm.cfg.bits;
                row.outlier_ratio = qm.cfg.keep_outliers_fp ? qm.cfg.outlier_ratio : 0.0;
                row.n_tokens = n_tokens;
                row.repeat = rep;
                row.seconds = std::chrono::duration<double>(t1 - t0).count();
                row.threads = threads;
                row.config_hash = config_hash;
                rows.push_back(std::move(row));
            }
        }
    }
    kernels::set_threads(prev_threads);
    return rows;
}

void write_bench_csv(std::span<const BenchRow> rows, std::ostream& out) {
    out << "arm,bits,outlier_ratio,n_tokens,repeat,seconds,threads,config_hash\n";
    char buf[32];
    for (const BenchRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.9f", r.seconds);
        out << r.arm << ',' << r.bits << ',' << r.outlier_ratio << ',' << r.n_tokens << ','
            << r.repeat << ',' << buf << ',' << r.threads << ',' << r.config_hash << '\n';
    }
}

}  // namespace npft
