// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/quant.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include "npft/infer.hpp"

namespace npft {

void QuantConfig::validate() const {
    if (bits < 2 || bits > 8) throw std::invalid_argument("QuantConfig: bits must be in [2,8]");
    if (outlier_ratio < 0.0 || outlier_ratio > 1.0)
        throw std::invalid_argument("QuantConfig: outlier_ratio must be in [0,1]");
}

double QuantizedMatrix::dequant_code(int r, int c) const {
    const int g = group_of_row(r);
    const uint8_t code = codes[static_cast<size_t>(r) * cols + c];
    if (scheme == QuantScheme::rtn)
        return zero_points[static_cast<size_t>(g)] + code * scales[static_cast<size_t>(g)];
    return codebooks[static_cast<size_t>(g) * (1 << bits) + code];
}

Tensor QuantizedMatrix::dequantize() const {
    Tensor out = Tensor::zeros({rows, cols});
    auto d = out.mutable_data();
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c)
            d[static_cast<size_t>(r) * cols + c] = dequant_code(r, c);
    for (const SparseEntry& e : sparse_outliers)
        d[static_cast<size_t>(e.row) * cols + e.col] = e.value;
    return out;
}

double QuantizedMatrix::effective_bits() const {
    const double n = static_cast<double>(rows) * cols;
    double overhead = 0.0;
    if (scheme == QuantScheme::rtn)
        overhead = 2.0 * 32.0 * n_groups();  // scale + zero point per group
    else
        overhead = 32.0 * (1 << bits) * n_groups();  // codebook entries per group
    overhead += 96.0 * static_cast<double>(sparse_outliers.size());  // u32,u32,f32 triplets
    return bits + overhead / n;
}

namespace {

struct Group {
    int row_begin, row_end;  // [begin, end)
};

std::vector<Group> make_groups(int rows, QuantGranularity g) {
    std::vector<Group> out;
    if (g == QuantGranularity::per_tensor) {
        out.push_back({0, rows});
    } else {
        out.reserve(static_cast<size_t>(rows));
        for (int r = 0; r < rows; ++r) out.push_back({r, r + 1});
    }
    return out;
}

}  // namespace

QuantizedMatrix rtn_quantize(const Tensor& w, const QuantConfig& cfg) {
    cfg.validate();
    for (double x : w.data())
        if (!std::isfinite(x)) throw std::invalid_argument("rtn_quantize: non-finite weight");

    QuantizedMatrix q;
    q.bits = cfg.bits;
    q.scheme = QuantScheme::rtn;
    q.granularity = cfg.granularity;
    q.rows = static_cast<int>(w.rows());
    q.cols = static_cast<int>(w.cols());
    q.codes.assign(static_cast<size_t>(q.rows) * q.cols, 0);

    const int max_code = cfg.levels() - 1;
    for (const Group& g : make_groups(q.rows, cfg.granularity)) {
        double mn = 1e300, mx = -1e300;
        for (int r = g.row_begin; r < g.row_end; ++r)
            for (int c = 0; c < q.cols; ++c) {
                mn = std::min(mn, w.at(r, c));
                mx = std::max(mx, w.at(r, c));
            }
        double scale, zero;
        if (mx == mn) {
            scale = 1.0;  // degenerate group: all codes 0, exact reconstruction
            zero = mn;
        } else {
            scale = (mx - mn) / static_cast<double>(max_code);
            zero = mn;
            for (int r = g.row_begin; r < g.row_end; ++r)
                for (int c = 0; c < q.cols; ++c) {
                    const double t = (w.at(r, c) - zero) / scale;
                    long code = std::lrint(t);  // round half to even (default FP mode)
                    code = std::clamp(code, 0l, static_cast<long>(max_code));
                    q.codes[static_cast<size_t>(r) * q.cols + c] = static_cast<uint8_t>(code);
                }
        }
        q.scales.push_back(scale);
        q.zero_points.push_back(zero);
    }
    return q;
}

namespace {

// One Lloyd run from a given initial codebook; appends per-iteration
// objectives and returns the final one.
double lloyd_run(std::span<const double> values, std::span<const double> weights, int k,
                 std::vector<double>& codebook, std::vector<uint8_t>& assign,
                 std::vector<double>* objectives) {
    const size_t n = values.size();
    auto nearest = [&](double v) {
        // codebook stays sorted (means of ordered clusters are ordered)
        const auto it = std::lower_bound(codebook.begin(), codebook.end(), v);
        int j = static_cast<int>(it - codebook.begin());
        if (j == k) return k - 1;
        if (j > 0 && v - codebook[static_cast<size_t>(j - 1)] <= codebook[static_cast<size_t>(j)] - v)
            --j;
        return j;
    };

    double obj = 0.0;
    double prev_obj = -1.0;
    std::vector<double> sum_w(static_cast<size_t>(k)), sum_wv(static_cast<size_t>(k));
    for (int iter = 0; iter < 100; ++iter) {
        // assignment step + objective
        obj = 0.0;
        std::fill(sum_w.begin(), sum_w.end(), 0.0);
        std::fill(sum_wv.begin(), sum_wv.end(), 0.0);
        for (size_t i = 0; i < n; ++i) {
            const int j = nearest(values[i]);
            assign[i] = static_cast<uint8_t>(j);
            const double d = values[i] - codebook[static_cast<size_t>(j)];
            obj += weights[i] * d * d;
            sum_w[static_cast<size_t>(j)] += weights[i];
            sum_wv[static_cast<size_t>(j)] += weights[i] * values[i];
        }
        if (objectives != nullptr) objectives->push_back(obj);
        if (prev_obj >= 0.0 &&
            std::abs(prev_obj - obj) < 1e-9 * std::max(1.0, std::abs(prev_obj)))
            break;
        prev_obj = obj;

        // update step: weighted mean of assigned points; empty clusters keep
        // their centroid (objective stays non-increasing)
        for (int j = 0; j < k; ++j)
            if (sum_w[static_cast<size_t>(j)] > 0.0)
                codebook[static_cast<size_t>(j)] =
                    sum_wv[static_cast<size_t>(j)] / sum_w[static_cast<size_t>(j)];
        std::sort(codebook.begin(), codebook.end());
    }

    // final assignment pass: every value maps to its nearest centroid
    for (size_t i = 0; i < n; ++i) assign[i] = static_cast<uint8_t>(nearest(values[i]));
    return obj;
}

// Weighted 1-D Lloyd for one group, best of two inits: weighted quantiles
// and the RTN grid. Starting one run from the RTN grid keeps the final
// objective at or below the RTN objective.
void lloyd_group(std::span<const double> values, std::span<const double> weights, int k,
                 std::vector<double>& codebook, std::vector<uint8_t>& assign,
                 std::vector<double>* objectives) {
    const size_t n = values.size();

    // <= k distinct values: codebook = distinct values, exact reconstruction
    {
        std::vector<double> distinct(values.begin(), values.end());
        std::sort(distinct.begin(), distinct.end());
        distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
        if (static_cast<int>(distinct.size()) <= k) {
            codebook.assign(static_cast<size_t>(k), distinct.back());
            std::copy(distinct.begin(), distinct.end(), codebook.begin());
            for (size_t i = 0; i < n; ++i) {
                const auto it = std::lower_bound(distinct.begin(), distinct.end(), values[i]);
                assign[i] = static_cast<uint8_t>(it - distinct.begin());
            }
            if (objectives != nullptr) objectives->push_back(0.0);
            return;
        }
    }

    // init A: quantiles of the weighted empirical distribution
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](size_t a, size_t b) { return values[a] < values[b]; });
    double total_w = 0.0;
    for (double wt : weights) total_w += wt;
    std::vector<double> quantile_init(static_cast<size_t>(k));
    {
        double cum = 0.0;
        size_t pos = 0;
        for (int j = 0; j < k; ++j) {
            const double target = total_w * (j + 0.5) / k;
            while (pos + 1 < n && cum + weights[order[pos]] < target) {
                cum += weights[order[pos]];
                ++pos;
            }
            quantile_init[static_cast<size_t>(j)] = values[order[pos]];
        }
        std::sort(quantile_init.begin(), quantile_init.end());
    }

    // init B: the RTN grid over [min, max]
    std::vector<double> grid_init(static_cast<size_t>(k));
    {
        const double mn = values[order.front()], mx = values[order.back()];
        const double scale = (mx - mn) / static_cast<double>(k - 1);
        for (int j = 0; j < k; ++j) grid_init[static_cast<size_t>(j)] = mn + j * scale;
    }

    std::vector<uint8_t> assign_a(n), assign_b(n);
    std::vector<double> obj_a, obj_b;
    std::vector<double> cb_a = quantile_init, cb_b = grid_init;
    const double fa = lloyd_run(values, weights, k, cb_a, assign_a, &obj_a);
    const double fb = lloyd_run(values, weights, k, cb_b, assign_b, &obj_b);

    if (fa <= fb) {
        codebook = std::move(cb_a);
        assign = std::move(assign_a);
        if (objectives != nullptr) *objectives = std::move(obj_a);
    } else {
        codebook = std::move(cb_b);
        assign = std::move(assign_b);
        if (objectives != nullptr) *objectives = std::move(obj_b);
    }
}

}  // namespace

QuantizedMatrix kmeans_quantize(const Tensor& w, const Tensor& fisher, const QuantConfig& cfg,
                                KmeansStats* stats) {
    cfg.validate();
    if (fisher.shape() != w.shape())
        throw std::invalid_argument("kmeans_quantize: fisher shape mismatch");

    QuantizedMatrix q;
    q.bits = cfg.bits;
    q.scheme = QuantScheme::kmeans_nonuniform;
    q.granularity = cfg.granularity;
    q.rows = static_cast<int>(w.rows());
    q.cols = static_cast<int>(w.cols());
    q.codes.assign(static_cast<size_t>(q.rows) * q.cols, 0);

    const int k = cfg.levels();
    std::vector<double> values, weights;
    std::vector<uint8_t> assign;
    std::vector<double> iter_obj;
    for (const Group& g : make_groups(q.rows, cfg.granularity)) {
        const size_t n = static_cast<size_t>(g.row_end - g.row_begin) * q.cols;
        values.resize(n);
        weights.resize(n);
        assign.assign(n, 0);
        size_t i = 0;
        double wsum = 0.0;
        for (int r = g.row_begin; r < g.row_end; ++r)
            for (int c = 0; c < q.cols; ++c, ++i) {
                values[i] = w.at(r, c);
                weights[i] = fisher.at(r, c);
                wsum += weights[i];
            }
        if (wsum == 0.0) std::fill(weights.begin(), weights.end(), 1.0);  // unweighted fallback

        std::vector<double> codebook;
        std::vector<double> group_obj;
        lloyd_group(values, weights, k, codebook, assign,
                    stats != nullptr ? &group_obj : nullptr);
        if (stats != nullptr) {
            if (iter_obj.size() < group_obj.size()) iter_obj.resize(group_obj.size(), 0.0);
            for (size_t j = 0; j < group_obj.size(); ++j) iter_obj[j] += group_obj[j];
            // pad with final value so summed sequence stays non-increasing
            for (size_t j = group_obj.size(); j < iter_obj.size(); ++j)
                iter_obj[j] += group_obj.back();
        }

        q.codebooks.insert(q.codebooks.end(), codebook.begin(), codebook.end());
        i = 0;
        for (int r = g.row_begin; r < g.row_end; ++r)
            for (int c = 0; c < q.cols; ++c, ++i)
                q.codes[static_cast<size_t>(r) * q.cols + c] = assign[i];
    }
    if (stats != nullptr) {
        stats->objectives = iter_obj;
        stats->iterations = static_cast<int>(iter_obj.size());
    }
    return q;
}

std::pair<Tensor, std::vector<SparseEntry>> extract_outliers(
    const Tensor& w, const std::vector<std::pair<int, int>>& mask_positions) {
    Tensor dense = w.clone();
    std::vector<SparseEntry> sparse;
    sparse.reserve(mask_positions.size());

    // group mean = plain mean over each output channel
    const int64_t rows = w.rows(), cols = w.cols();
    std::vector<double> row_mean(static_cast<size_t>(rows), 0.0);
    for (int64_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int64_t c = 0; c < cols; ++c) s += w.at(r, c);
        row_mean[static_cast<size_t>(r)] = s / static_cast<double>(cols);
    }

    std::vector<std::pair<int, int>> sorted = mask_positions;
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    for (const auto& [r, c] : sorted) {
        if (r < 0 || r >= rows || c < 0 || c >= cols)
            throw std::out_of_range("extract_outliers: position out of range");
        sparse.push_back({r, c, w.at(r, c)});
        dense.at(r, c) = row_mean[static_cast<size_t>(r)];
    }
    return {std::move(dense), std::move(sparse)};
}

double BitsReport::average() const {
    double bits_total = 0.0;
    int64_t n = 0;
    for (const Row& r : per_matrix) {
        bits_total += r.bits * static_cast<double>(r.n_weights);
        n += r.n_weights;
    }
    return n == 0 ? 0.0 : bits_total / static_cast<double>(n);
}

void BitsReport::write_csv(std::ostream& out) const {
    out << "weight_id,n_weights,effective_bits\n";
    char buf[32];
    for (const Row& r : per_matrix) {
        std::snprintf(buf, sizeof(buf), "%.6f", r.bits);
        out << to_string(r.id) << ',' << r.n_weights << ',' << buf << '\n';
    }
    std::snprintf(buf, sizeof(buf), "%.6f", average());
    out << "average,," << buf << '\n';
}

QuantizedModel quantize_model(const LanguageModel& model, const QuantConfig& cfg,
                              const FisherDiag* fisher) {
    cfg.validate();
    const bool needs_fisher = cfg.scheme == QuantScheme::kmeans_nonuniform || cfg.keep_outliers_fp;
    if (needs_fisher && fisher == nullptr)
        throw std::invalid_argument("quantize_model: this config requires a FisherDiag");

    QuantizedModel out{model.clone(), {}, cfg, {}};
    for (const WeightId& id : model.block_weight_ids()) {
        const Tensor& w = model.weight(id);

        Tensor dense = w;
        std::vector<SparseEntry> sparse;
        if (cfg.keep_outliers_fp && cfg.outlier_ratio > 0.0) {
            const Tensor& f = fisher->f.at(id);
            const auto k = static_cast<int64_t>(
                std::llround(cfg.outlier_ratio * static_cast<double>(w.size())));
            auto positions = top_positions(f, k);
            std::tie(dense, sparse) = extract_outliers(w, positions);
        }

        QuantizedMatrix q = cfg.scheme == QuantScheme::rtn
                                ? rtn_quantize(dense, cfg)
                                : kmeans_quantize(dense, fisher->f.at(id), cfg);
        q.sparse_outliers = std::move(sparse);

        Tensor recon = q.dequantize();
        out.model.weight(id).mutable_data();
        std::copy(recon.data().begin(), recon.data().end(),
                  out.model.weight(id).mutable_data().begin());
        out.bits.per_matrix.push_back({id, q.effective_bits(), w.size()});
        out.matrices.emplace(id, std::move(q));
    }
    return out;
}

// ---- quantized checkpoint ----

namespace {

NamedBlob f64_blob(const std::string& name, const std::vector<double>& v) {
    NamedBlob b;
    b.name = name;
    b.dtype = BlobDtype::f64;
    b.shape = {static_cast<int64_t>(v.size())};
    b.bytes.resize(v.size() * sizeof(double));
    std::memcpy(b.bytes.data(), v.data(), b.bytes.size());
    return b;
}

std::vector<double> f64_from_blob(const NamedBlob& b) {
    std::vector<double> v(b.bytes.size() / sizeof(double));
    std::memcpy(v.data(), b.bytes.data(), b.bytes.size());
    return v;
}

}  // namespace

void save_quantized(const QuantizedModel& qm, const std::string& path) {
    std::vector<NamedBlob> blobs;

    // full model container first (config + dequantized weights, so the file
    // loads as a plain checkpoint too)
    const std::string tmp = path + ".model.tmp";
    qm.model.save(tmp);
    blobs = read_blob_file(tmp);
    std::remove(tmp.c_str());

    {
        NamedBlob meta;
        meta.name = "__quant_config__";
        meta.dtype = BlobDtype::u32;
        const uint32_t fields[5] = {static_cast<uint32_t>(qm.cfg.bits),
                                    static_cast<uint32_t>(qm.cfg.scheme),
                                    static_cast<uint32_t>(qm.cfg.granularity),
                                    qm.cfg.keep_outliers_fp ? 1u : 0u,
                                    static_cast<uint32_t>(qm.cfg.outlier_ratio * 1e9)};
        meta.shape = {5};
        meta.bytes.resize(sizeof(fields));
        std::memcpy(meta.bytes.data(), fields, sizeof(fields));
        blobs.push_back(std::move(meta));
    }

    for (const auto& [id, q] : qm.matrices) {
        const std::string base = "__q__" + to_string(id);
        NamedBlob codes;
        codes.name = base + ".codes";
        codes.dtype = BlobDtype::u8;
        codes.shape = {q.rows, q.cols};
        codes.bytes = pack_codes(q.codes, q.bits);  // bit-contiguous little-endian
        blobs.push_back(std::move(codes));

        if (q.scheme == QuantScheme::rtn) {
            blobs.push_back(f64_blob(base + ".scales", q.scales));
            blobs.push_back(f64_blob(base + ".zeros", q.zero_points));
        } else {
            blobs.push_back(f64_blob(base + ".codebooks", q.codebooks));
        }
    }
    // sparse outlier triplets: (row u32, col u32, value f32)
    for (const auto& [id, q] : qm.matrices) {
        if (q.sparse_outliers.empty()) continue;
        NamedBlob sp;
        sp.name = "__q__" + to_string(id) + ".outliers";
        sp.dtype = BlobDtype::u8;
        sp.shape = {static_cast<int64_t>(q.sparse_outliers.size()), 3};
        sp.bytes.resize(q.sparse_outliers.size() * 12);
        uint8_t* p = sp.bytes.data();
        for (const SparseEntry& e : q.sparse_outliers) {
            const uint32_t r = static_cast<uint32_t>(e.row);
            const uint32_t c = static_cast<uint32_t>(e.col);
            const float v = static_cast<float>(e.value);
            std::memcpy(p, &r, 4);
            std::memcpy(p + 4, &c, 4);
            std::memcpy(p + 8, &v, 4);
            p += 12;
        }
        blobs.push_back(std::move(sp));
    }
    write_blob_file(path, blobs);
}

QuantizedModel load_quantized(const std::string& path) {
    const auto blobs = read_blob_file(path);

    QuantizedModel qm{LanguageModel::load(path), {}, {}, {}};

    const NamedBlob* meta = nullptr;
    for (const auto& b : blobs)
        if (b.name == "__quant_config__") meta = &b;
    if (meta == nullptr) throw std::runtime_error("load_quantized: not a quantized checkpoint");
    uint32_t f[5];
    std::memcpy(f, meta->bytes.data(), sizeof(f));
    qm.cfg.bits = static_cast<int>(f[0]);
    qm.cfg.scheme = static_cast<QuantScheme>(f[1]);
    qm.cfg.granularity = static_cast<QuantGranularity>(f[2]);
    qm.cfg.keep_outliers_fp = f[3] != 0;
    qm.cfg.outlier_ratio = static_cast<double>(f[4]) / 1e9;

    for (const auto& b : blobs) {
        if (b.name.rfind("__q__", 0) != 0) continue;
        const std::string rest = b.name.substr(5);
        const auto dot = rest.rfind('.');
        const WeightId id = parse_weight_id(rest.substr(0, dot));
        const std::string field = rest.substr(dot + 1);
        QuantizedMatrix& q = qm.matrices[id];
        q.bits = qm.cfg.bits;
        q.scheme = qm.cfg.scheme;
        q.granularity = qm.cfg.granularity;
        if (field == "codes") {
            q.rows = static_cast<int>(b.shape[0]);
            q.cols = static_cast<int>(b.shape[1]);
            q.codes = unpack_codes(b.bytes, qm.cfg.bits,
                                   static_cast<size_t>(q.rows) * static_cast<size_t>(q.cols));
        } else if (field == "scales") {
            q.scales = f64_from_blob(b);
        } else if (field == "zeros") {
            q.zero_points = f64_from_blob(b);
        } else if (field == "codebooks") {
            q.codebooks = f64_from_blob(b);
        } else if (field == "outliers") {
            const size_t n = b.bytes.size() / 12;
            const uint8_t* p = b.bytes.data();
            for (size_t i = 0; i < n; ++i, p += 12) {
                uint32_t r, c;
                float v;
                std::memcpy(&r, p, 4);
                std::memcpy(&c, p + 4, 4);
                std::memcpy(&v, p + 8, 4);
                q.sparse_outliers.push_back(
                    {static_cast<int>(r), static_cast<int>(c), static_cast<double>(v)});
            }
        }
    }

    for (auto& [id, q] : qm.matrices)
        qm.bits.per_matrix.push_back(
            {id, q.effective_bits(), static_cast<int64_t>(q.rows) * q.cols});
    return qm;
}

}  // namespace npft
