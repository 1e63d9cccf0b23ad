// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "npft/common.hpp"

namespace npft {

void ModelConfig::validate() const {
    if (vocab_size <= 0 || d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
        throw std::invalid_argument("ModelConfig: dimensions must be positive");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("ModelConfig: d_model must be divisible by n_heads");
    if (context_len < 2) throw std::invalid_argument("ModelConfig: context_len must be >= 2");
}

namespace {

const char* weight_name_str(WeightName n) {
    switch (n) {
        case WeightName::attn_q: return "attn_q";
        case WeightName::attn_k: return "attn_k";
        case WeightName::attn_v: return "attn_v";
        case WeightName::attn_o: return "attn_o";
        case WeightName::mlp_in: return "mlp_in";
        case WeightName::mlp_out: return "mlp_out";
        case WeightName::embed: return "embed";
        case WeightName::lm_head: return "lm_head";
    }
    return "?";
}

constexpr WeightName kLayerNames[6] = {WeightName::attn_q, WeightName::attn_k,
                                       WeightName::attn_v, WeightName::attn_o,
                                       WeightName::mlp_in, WeightName::mlp_out};

}  // namespace

std::string to_string(const WeightId& id) {
    if (id.name == WeightName::embed || id.name == WeightName::lm_head)
        return weight_name_str(id.name);
    return "layer" + std::to_string(id.layer) + "." + weight_name_str(id.name);
}

WeightId parse_weight_id(const std::string& s) {
    auto name_of = [](const std::string& n) {
        for (WeightName w : {WeightName::attn_q, WeightName::attn_k, WeightName::attn_v,
                             WeightName::attn_o, WeightName::mlp_in, WeightName::mlp_out,
                             WeightName::embed, WeightName::lm_head})
            if (n == weight_name_str(w)) return w;
        throw std::invalid_argument("parse_weight_id: unknown name " + n);
    };
    if (s == "embed") return {-1, WeightName::embed};
    if (s == "lm_head") return {-1, WeightName::lm_head};
    if (s.rfind("layer", 0) != 0) throw std::invalid_argument("parse_weight_id: " + s);
    const auto dot = s.find('.');
    if (dot == std::string::npos) throw std::invalid_argument("parse_weight_id: " + s);
    WeightId id;
    id.layer = std::stoi(s.substr(5, dot - 5));
    id.name = name_of(s.substr(dot + 1));
    return id;
}

bool is_attn(WeightName n) {
    return n == WeightName::attn_q || n == WeightName::attn_k || n == WeightName::attn_v ||
           n == WeightName::attn_o;
}

bool is_mlp(WeightName n) { return n == WeightName::mlp_in || n == WeightName::mlp_out; }

bool in_subset(const WeightId& id, LayerSubset subset) {
    if (id.name == WeightName::embed || id.name == WeightName::lm_head) return false;
    switch (subset) {
        case LayerSubset::attn_only: return is_attn(id.name);
        case LayerSubset::mlp_only: return is_mlp(id.name);
        case LayerSubset::all: return true;
    }
    return false;
}

namespace {

std::vector<int64_t> weight_shape(const ModelConfig& cfg, const WeightId& id) {
    // convention: [d_out, d_in]
    switch (id.name) {
        case WeightName::attn_q:
        case WeightName::attn_k:
        case WeightName::attn_v:
        case WeightName::attn_o: return {cfg.d_model, cfg.d_model};
        case WeightName::mlp_in: return {cfg.d_ff, cfg.d_model};
        case WeightName::mlp_out: return {cfg.d_model, cfg.d_ff};
        case WeightName::embed:
        case WeightName::lm_head: return {cfg.vocab_size, cfg.d_model};
    }
    throw std::logic_error("weight_shape: bad id");
}

Tensor sinusoidal_encoding(int context_len, int d_model) {
    Tensor pe = Tensor::zeros({context_len, d_model});
    auto d = pe.mutable_data();
    for (int t = 0; t < context_len; ++t) {
        for (int j = 0; j < d_model / 2; ++j) {
            const double freq = std::pow(10000.0, -2.0 * j / static_cast<double>(d_model));
            d[static_cast<size_t>(t) * d_model + 2 * j] = std::sin(t * freq);
            d[static_cast<size_t>(t) * d_model + 2 * j + 1] = std::cos(t * freq);
        }
    }
    return pe;
}

}  // namespace

LanguageModel make_empty_model(const ModelConfig& cfg) {
    LanguageModel m;
    m.cfg_ = cfg;
    m.pos_encoding_ = sinusoidal_encoding(cfg.context_len, cfg.d_model);
    return m;
}

LanguageModel::LanguageModel(const ModelConfig& cfg) {
    cfg.validate();
    cfg_ = cfg;
    pos_encoding_ = sinusoidal_encoding(cfg.context_len, cfg.d_model);
    Rng rng(derive_seed(cfg.seed, "model-init"));
    std::normal_distribution<double> init(0.0, 0.02);
    for (const WeightId& id : weight_ids()) {
        Tensor w = Tensor::zeros(weight_shape(cfg, id));
        for (double& x : w.mutable_data()) x = init(rng);
        weights_.emplace(id, std::move(w));
    }
}

std::vector<WeightId> LanguageModel::weight_ids() const {
    std::vector<WeightId> ids;
    ids.push_back({-1, WeightName::embed});
    for (int l = 0; l < cfg_.n_layers; ++l)
        for (WeightName n : kLayerNames) ids.push_back({l, n});
    ids.push_back({-1, WeightName::lm_head});
    return ids;
}

std::vector<WeightId> LanguageModel::block_weight_ids(LayerSubset subset) const {
    std::vector<WeightId> ids;
    for (const WeightId& id : weight_ids())
        if (in_subset(id, subset)) ids.push_back(id);
    return ids;
}

Tensor& LanguageModel::weight(const WeightId& id) {
    auto it = weights_.find(id);
    if (it == weights_.end())
        throw std::out_of_range("LanguageModel: no weight " + to_string(id));
    return it->second;
}

const Tensor& LanguageModel::weight(const WeightId& id) const {
    auto it = weights_.find(id);
    if (it == weights_.end())
        throw std::out_of_range("LanguageModel: no weight " + to_string(id));
    return it->second;
}

void LanguageModel::set_base_requires_grad(bool rg) {
    for (auto& [id, w] : weights_) w.set_requires_grad(rg);
}

void LanguageModel::zero_grads() {
    for (auto& [id, w] : weights_) w.zero_grad();
}

uint64_t LanguageModel::weight_hash() const {
    uint64_t h = 14695981039346656037ull;
    for (const auto& [id, w] : weights_) {
        const std::string name = to_string(id);
        h = fnv1a(name.data(), name.size(), h);
        h = fnv1a(w.data().data(), w.data().size() * sizeof(double), h);
    }
    return h;
}

LanguageModel LanguageModel::clone() const {
    LanguageModel m = make_empty_model(cfg_);
    for (const auto& [id, w] : weights_) m.weights_.emplace(id, w.clone());
    return m;
}

Tensor LanguageModel::forward_loss(const Batch& batch, std::span<const Overlay> overlays,
                                   std::span<const LoraAdapter> adapters) const {
    if (batch.batch <= 0 || batch.seq <= 0)
        throw std::invalid_argument("forward_loss: empty batch");
    if (batch.seq > cfg_.context_len)
        throw std::invalid_argument("forward_loss: sequence longer than context");
    if (batch.inputs.size() != static_cast<size_t>(batch.batch) * batch.seq ||
        batch.targets.size() != batch.inputs.size())
        throw std::invalid_argument("forward_loss: batch size mismatch");

    // effective weights: W + sum(overlays) + (alpha/r) U^T V
    std::map<WeightId, Tensor> eff;
    auto effective = [&](const WeightId& id) -> const Tensor& {
        auto it = eff.find(id);
        return it == eff.end() ? weight(id) : it->second;
    };
    // same-target overlays are summed first so that {z1, z2} and {z1+z2}
    // take the identical arithmetic path
    std::map<WeightId, Tensor> overlay_sum;
    for (const Overlay& o : overlays) {
        if (o.values.shape() != weight(o.target).shape())
            throw std::invalid_argument("forward_loss: overlay shape mismatch on " +
                                        to_string(o.target));
        auto it = overlay_sum.find(o.target);
        if (it == overlay_sum.end()) {
            overlay_sum.emplace(o.target, o.values);
        } else {
            Tensor summed = it->second.clone();
            auto sd = summed.mutable_data();
            auto od = o.values.data();
            for (size_t i = 0; i < sd.size(); ++i) sd[i] += od[i];
            it->second = std::move(summed);
        }
    }
    for (const auto& [id, z] : overlay_sum) eff[id] = add(weight(id), z);
    for (const LoraAdapter& a : adapters) {
        const Tensor& base = effective(a.target);
        Tensor delta = scale(matmul_tn(a.u, a.v), a.scaling());
        if (delta.shape() != base.shape())
            throw std::invalid_argument("forward_loss: adapter shape mismatch on " +
                                        to_string(a.target));
        eff[a.target] = add(base, delta);
    }

    const int b = batch.batch, t = batch.seq;

    // embedding + fixed position encoding, tiled over the batch
    Tensor x = embedding_lookup(effective({-1, WeightName::embed}), batch.inputs);
    Tensor pos = Tensor::zeros({static_cast<int64_t>(b) * t, cfg_.d_model});
    {
        auto pd = pos.mutable_data();
        auto pe = pos_encoding_.data();
        for (int i = 0; i < b; ++i)
            std::memcpy(pd.data() + static_cast<size_t>(i) * t * cfg_.d_model, pe.data(),
                        sizeof(double) * t * cfg_.d_model);
    }
    x = add(x, pos);

    for (int l = 0; l < cfg_.n_layers; ++l) {
        Tensor h = layer_norm(x);
        Tensor q = matmul_nt(h, effective({l, WeightName::attn_q}));
        Tensor k = matmul_nt(h, effective({l, WeightName::attn_k}));
        Tensor v = matmul_nt(h, effective({l, WeightName::attn_v}));
        Tensor a = causal_self_attention(q, k, v, b, t, cfg_.n_heads);
        x = add(x, matmul_nt(a, effective({l, WeightName::attn_o})));

        Tensor h2 = layer_norm(x);
        Tensor m = gelu(matmul_nt(h2, effective({l, WeightName::mlp_in})));
        x = add(x, matmul_nt(m, effective({l, WeightName::mlp_out})));
    }

    Tensor hf = layer_norm(x);
    Tensor logits = matmul_nt(hf, effective({-1, WeightName::lm_head}));
    return softmax_cross_entropy(logits, batch.targets);
}

PerplexityResult LanguageModel::perplexity(std::span<const int> corpus_tokens,
                                           int window_batch) const {
    const int t = cfg_.context_len;
    const int64_t n_windows = static_cast<int64_t>(corpus_tokens.size()) / t;
    if (n_windows < 1)
        throw std::invalid_argument("perplexity: corpus shorter than one window");

    NoGradScope no_grad;
    PerplexityResult res;
    for (int64_t w0 = 0; w0 < n_windows; w0 += window_batch) {
        const int nb = static_cast<int>(std::min<int64_t>(window_batch, n_windows - w0));
        Batch batch;
        batch.batch = nb;
        batch.seq = t - 1;
        batch.inputs.reserve(static_cast<size_t>(nb) * (t - 1));
        batch.targets.reserve(static_cast<size_t>(nb) * (t - 1));
        for (int i = 0; i < nb; ++i) {
            const int* win = corpus_tokens.data() + (w0 + i) * t;
            batch.inputs.insert(batch.inputs.end(), win, win + t - 1);
            batch.targets.insert(batch.targets.end(), win + 1, win + t);
        }
        const double nll = forward_loss(batch).item();
        res.total_nll += nll * static_cast<double>(batch.inputs.size());
        res.n_tokens += static_cast<int64_t>(batch.inputs.size());
    }
    res.ppl = std::exp(res.total_nll / static_cast<double>(res.n_tokens));
    return res;
}

LoraAdapter make_lora(const LanguageModel& model, const WeightId& target, int rank, double alpha,
                      uint64_t seed) {
    if (rank <= 0) throw std::invalid_argument("make_lora: rank must be positive");
    const Tensor& w = model.weight(target);
    LoraAdapter a;
    a.target = target;
    a.rank = rank;
    a.alpha = alpha;
    a.u = Tensor::zeros({rank, w.rows()}, true);  // zero init: zero effective delta
    a.v = Tensor::zeros({rank, w.cols()}, true);
    Rng rng(derive_seed(seed, "lora-init:" + to_string(target)));
    std::normal_distribution<double> init(0.0, 0.02);
    for (double& x : a.v.mutable_data()) x = init(rng);
    return a;
}

std::vector<LoraAdapter> make_lora_set(const LanguageModel& model, LayerSubset subset, int rank,
                                       double alpha, uint64_t seed) {
    std::vector<LoraAdapter> out;
    for (const WeightId& id : model.block_weight_ids(subset))
        out.push_back(make_lora(model, id, rank, alpha, seed));
    return out;
}

void merge_lora(LanguageModel& model, std::span<const LoraAdapter> adapters) {
    std::vector<WeightId> seen;
    for (const LoraAdapter& a : adapters) {
        if (std::find(seen.begin(), seen.end(), a.target) != seen.end())
            throw std::invalid_argument("merge_lora: duplicate adapter on " + to_string(a.target));
        seen.push_back(a.target);
    }
    for (const LoraAdapter& a : adapters) {
        Tensor& w = model.weight(a.target);
        Tensor delta = matmul_tn(a.u, a.v);
        const double s = a.scaling();
        auto wd = w.mutable_data();
        auto dd = delta.data();
        for (size_t i = 0; i < wd.size(); ++i) wd[i] += s * dd[i];
    }
}

Batch sample_batch(std::span<const int> tokens, int batch, int seq, uint64_t seed) {
    if (static_cast<int64_t>(tokens.size()) < seq + 1)
        throw std::invalid_argument("sample_batch: token stream too short");
    Batch b;
    b.batch = batch;
    b.seq = seq;
    Rng rng(seed);
    std::uniform_int_distribution<int64_t> dist(0, static_cast<int64_t>(tokens.size()) - seq - 1);
    for (int i = 0; i < batch; ++i) {
        const int64_t start = dist(rng);
        b.inputs.insert(b.inputs.end(), tokens.begin() + start, tokens.begin() + start + seq);
        b.targets.insert(b.targets.end(), tokens.begin() + start + 1,
                         tokens.begin() + start + seq + 1);
    }
    return b;
}

Batch batch_from_segments(const std::vector<std::vector<int>>& segments, size_t first,
                          size_t count) {
    if (first + count > segments.size())
        throw std::out_of_range("batch_from_segments: range out of bounds");
    Batch b;
    b.batch = static_cast<int>(count);
    b.seq = static_cast<int>(segments[first].size()) - 1;
    if (b.seq < 1) throw std::invalid_argument("batch_from_segments: segments too short");
    for (size_t i = first; i < first + count; ++i) {
        const auto& s = segments[i];
        b.inputs.insert(b.inputs.end(), s.begin(), s.end() - 1);
        b.targets.insert(b.targets.end(), s.begin() + 1, s.end());
    }
    return b;
}

// ---- checkpoint container ----

namespace {

constexpr char kMagic[4] = {'N', 'P', 'F', 'T'};

template <typename T>
void write_pod(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

}  // namespace

void write_blob_file(const std::string& path, const std::vector<NamedBlob>& blobs,
                     uint32_t version) {
    std::ofstream out(path, std::ios::binary);
    if (!out.is_open()) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, 4);
    write_pod(out, version);
    write_pod(out, static_cast<uint32_t>(blobs.size()));
    uint64_t offset = 0;
    for (const NamedBlob& b : blobs) {
        write_pod(out, static_cast<uint32_t>(b.name.size()));
        out.write(b.name.data(), static_cast<std::streamsize>(b.name.size()));
        write_pod(out, static_cast<uint8_t>(b.dtype));
        write_pod(out, static_cast<uint32_t>(b.shape.size()));
        for (int64_t d : b.shape) write_pod(out, d);
        write_pod(out, offset);
        write_pod(out, static_cast<uint64_t>(b.bytes.size()));
        offset += b.bytes.size();
    }
    for (const NamedBlob& b : blobs)
        out.write(reinterpret_cast<const char*>(b.bytes.data()),
                  static_cast<std::streamsize>(b.bytes.size()));
    if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

std::vector<NamedBlob> read_blob_file(const std::string& path, uint32_t* version) {
    std::ifstream in(path, std::ios::binary);
    if (!in.is_open()) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    const auto ver = read_pod<uint32_t>(in);
    if (version != nullptr) *version = ver;
    const auto count = read_pod<uint32_t>(in);
    std::vector<NamedBlob> blobs(count);
    std::vector<std::pair<uint64_t, uint64_t>> spans(count);
    for (uint32_t i = 0; i < count; ++i) {
        NamedBlob& b = blobs[i];
        const auto name_len = read_pod<uint32_t>(in);
        b.name.resize(name_len);
        in.read(b.name.data(), name_len);
        b.dtype = static_cast<BlobDtype>(read_pod<uint8_t>(in));
        const auto ndim = read_pod<uint32_t>(in);
        b.shape.resize(ndim);
        for (uint32_t d = 0; d < ndim; ++d) b.shape[d] = read_pod<int64_t>(in);
        spans[i].first = read_pod<uint64_t>(in);
        spans[i].second = read_pod<uint64_t>(in);
    }
    const std::streampos data_start = in.tellg();
    for (uint32_t i = 0; i < count; ++i) {
        blobs[i].bytes.resize(spans[i].second);
        in.seekg(data_start + static_cast<std::streamoff>(spans[i].first));
        in.read(reinterpret_cast<char*>(blobs[i].bytes.data()),
                static_cast<std::streamsize>(spans[i].second));
        if (!in) throw std::runtime_error("checkpoint: truncated data in " + path);
    }
    return blobs;
}

NamedBlob blob_from_tensor(const std::string& name, const Tensor& t) {
    NamedBlob b;
    b.name = name;
    b.dtype = BlobDtype::f64;
    b.shape = t.shape();
    b.bytes.resize(t.data().size() * sizeof(double));
    std::memcpy(b.bytes.data(), t.data().data(), b.bytes.size());
    return b;
}

Tensor tensor_from_blob(const NamedBlob& b) {
    if (b.dtype != BlobDtype::f64)
        throw std::runtime_error("checkpoint: tensor blob " + b.name + " is not f64");
    std::vector<double> data(b.bytes.size() / sizeof(double));
    std::memcpy(data.data(), b.bytes.data(), b.bytes.size());
    return Tensor::from_data(b.shape, std::move(data));
}

void LanguageModel::save(const std::string& path) const {
    std::vector<NamedBlob> blobs;
    NamedBlob cfg;
    cfg.name = "__config__";
    cfg.dtype = BlobDtype::u32;
    const uint32_t fields[8] = {static_cast<uint32_t>(cfg_.vocab_size),
                                static_cast<uint32_t>(cfg_.d_model),
                                static_cast<uint32_t>(cfg_.n_layers),
                                static_cast<uint32_t>(cfg_.n_heads),
                                static_cast<uint32_t>(cfg_.d_ff),
                                static_cast<uint32_t>(cfg_.context_len),
                                static_cast<uint32_t>(cfg_.seed & 0xffffffffu),
                                static_cast<uint32_t>(cfg_.seed >> 32)};
    cfg.shape = {8};
    cfg.bytes.resize(sizeof(fields));
    std::memcpy(cfg.bytes.data(), fields, sizeof(fields));
    blobs.push_back(std::move(cfg));
    for (const auto& [id, w] : weights_) blobs.push_back(blob_from_tensor(to_string(id), w));
    write_blob_file(path, blobs);
}

LanguageModel LanguageModel::load(const std::string& path) {
    const auto blobs = read_blob_file(path);
    const NamedBlob* cfg_blob = nullptr;
    for (const auto& b : blobs)
        if (b.name == "__config__") cfg_blob = &b;
    if (cfg_blob == nullptr || cfg_blob->bytes.size() != 8 * sizeof(uint32_t))
        throw std::runtime_error("checkpoint: missing model config in " + path);
    uint32_t f[8];
    std::memcpy(f, cfg_blob->bytes.data(), sizeof(f));
    ModelConfig cfg;
    cfg.vocab_size = static_cast<int>(f[0]);
    cfg.d_model = static_cast<int>(f[1]);
    cfg.n_layers = static_cast<int>(f[2]);
    cfg.n_heads = static_cast<int>(f[3]);
    cfg.d_ff = static_cast<int>(f[4]);
    cfg.context_len = static_cast<int>(f[5]);
    cfg.seed = static_cast<uint64_t>(f[6]) | (static_cast<uint64_t>(f[7]) << 32);
    cfg.validate();

    LanguageModel m = make_empty_model(cfg);
    for (const auto& b : blobs) {
        if (b.name == "__config__" || b.name.rfind("__", 0) == 0) continue;
        m.weights_.emplace(parse_weight_id(b.name), tensor_from_blob(b));
    }
    const size_t expected = m.weight_ids().size();
    if (m.weights_.size() != expected)
        throw std::runtime_error("checkpoint: weight count mismatch in " + path);
    return m;
}

}  // namespace npft
