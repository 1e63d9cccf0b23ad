// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "npft/tensor.hpp"

namespace npft {

struct ModelConfig {
    int vocab_size = 256;
    int d_model = 128;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 512;
    int context_len = 128;
    uint64_t seed = 42;

    void validate() const;
};

enum class WeightName { attn_q, attn_k, attn_v, attn_o, mlp_in, mlp_out, embed, lm_head };

// Addresses exactly one 2-D weight matrix. layer is -1 for embed/lm_head.
struct WeightId {
    int layer = -1;
    WeightName name = WeightName::embed;

    auto operator<=>(const WeightId&) const = default;
};

std::string to_string(const WeightId& id);
WeightId parse_weight_id(const std::string& s);
bool is_attn(WeightName n);
bool is_mlp(WeightName n);

enum class LayerSubset { attn_only, mlp_only, all };
// True for the attention/MLP matrices selected by `subset`; embed/lm_head never.
bool in_subset(const WeightId& id, LayerSubset subset);

// Trainable low-rank delta on a frozen target: effective delta (alpha/r) U^T V.
struct LoraAdapter {
    WeightId target;
    int rank = 8;
    double alpha = 16.0;
    Tensor u;  // [rank, d_out], zero-initialized
    Tensor v;  // [rank, d_in], normal-initialized

    double scaling() const { return alpha / static_cast<double>(rank); }
};

// Additive same-shape matrix applied at forward time; base weights are never
// mutated by an overlay.
struct Overlay {
    WeightId target;
    Tensor values;
};

// Inputs/targets for next-token prediction, flattened row-major [batch, seq].
struct Batch {
    int batch = 0;
    int seq = 0;
    std::vector<int> inputs;
    std::vector<int> targets;
};

struct PerplexityResult {
    double ppl = 0.0;
    double total_nll = 0.0;
    int64_t n_tokens = 0;
};

// Tiny decoder-only transformer: pre-LN blocks, causal attention, GELU MLP,
// fixed sinusoidal position encoding, untied embed / lm_head, no biases.
class LanguageModel {
  public:
    LanguageModel() = default;  // empty shell; assign before use
    explicit LanguageModel(const ModelConfig& cfg);

    const ModelConfig& config() const { return cfg_; }

    std::vector<WeightId> weight_ids() const;                    // deterministic order
    std::vector<WeightId> block_weight_ids(LayerSubset subset = LayerSubset::all) const;
    Tensor& weight(const WeightId& id);
    const Tensor& weight(const WeightId& id) const;

    void set_base_requires_grad(bool rg);
    void zero_grads();
    uint64_t weight_hash() const;
    LanguageModel clone() const;

    // One L(.) evaluation: mean next-token NLL with effective weights
    // W + sum(overlays) + (alpha/r) U^T V on the targeted matrices.
    Tensor forward_loss(const Batch& batch, std::span<const Overlay> overlays = {},
                        std::span<const LoraAdapter> adapters = {}) const;

    PerplexityResult perplexity(std::span<const int> corpus_tokens, int window_batch = 8) const;

    void save(const std::string& path) const;
    static LanguageModel load(const std::string& path);

  private:
    ModelConfig cfg_;
    std::map<WeightId, Tensor> weights_;
    Tensor pos_encoding_;  // [context_len, d_model], constant

    friend LanguageModel make_empty_model(const ModelConfig& cfg);
};

LoraAdapter make_lora(const LanguageModel& model, const WeightId& target, int rank, double alpha,
                      uint64_t seed);
std::vector<LoraAdapter> make_lora_set(const LanguageModel& model, LayerSubset subset, int rank,
                                       double alpha, uint64_t seed);

// W <- W + (alpha/r) U^T V for every adapter, in place; rejects duplicate targets.
void merge_lora(LanguageModel& model, std::span<const LoraAdapter> adapters);

// Random contiguous windows of length seq+1 -> (inputs, targets).
Batch sample_batch(std::span<const int> tokens, int batch, int seq, uint64_t seed);
Batch batch_from_segments(const std::vector<std::vector<int>>& segments, size_t first,
                          size_t count);

// ---- checkpoint container (shared with quantized checkpoints) ----
// magic "NPFT", version u32, tensor table, little-endian raw data.

enum class BlobDtype : uint8_t { f64 = 0, f32 = 1, u8 = 2, u32 = 3 };

struct NamedBlob {
    std::string name;
    BlobDtype dtype = BlobDtype::u8;
    std::vector<int64_t> shape;
    std::vector<uint8_t> bytes;
};

void write_blob_file(const std::string& path, const std::vector<NamedBlob>& blobs,
                     uint32_t version = 1);
std::vector<NamedBlob> read_blob_file(const std::string& path, uint32_t* version = nullptr);

NamedBlob blob_from_tensor(const std::string& name, const Tensor& t);
Tensor tensor_from_blob(const NamedBlob& b);

}  // namespace npft
