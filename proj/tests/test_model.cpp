// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "npft/kernels.hpp"
#include "npft/model.hpp"
#include "npft/train.hpp"
#include "support.hpp"

using namespace npft;
using npft::test::make_toy_tokens;
using npft::test::toy_config;

TEST_SUITE_BEGIN("model");

TEST_CASE("same seed builds bitwise-identical parameters") {
    ModelConfig cfg = toy_config(21);
    LanguageModel a(cfg), b(cfg);
    CHECK(a.weight_hash() == b.weight_hash());
    cfg.seed = 22;
    LanguageModel c(cfg);
    CHECK(a.weight_hash() != c.weight_hash());
}

TEST_CASE("weight enumeration: 2 layers give 14 matrices") {
    ModelConfig cfg = toy_config();
    LanguageModel m(cfg);
    const auto ids = m.weight_ids();
    CHECK(ids.size() == 2 * 6 + 2);
    CHECK(m.block_weight_ids(LayerSubset::all).size() == 12);
    CHECK(m.block_weight_ids(LayerSubset::attn_only).size() == 8);
    CHECK(m.block_weight_ids(LayerSubset::mlp_only).size() == 4);
    for (const WeightId& id : ids) CHECK(parse_weight_id(to_string(id)) == id);
}

TEST_CASE("fresh model loss is near ln(vocab)") {
    ModelConfig cfg = toy_config(33, 29);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(512, cfg.vocab_size, 3);
    Batch batch = sample_batch(tokens, 8, cfg.context_len - 1, 4);
    const double loss = m.forward_loss(batch).item();
    const double uniform = std::log(static_cast<double>(cfg.vocab_size));
    CHECK(loss == doctest::Approx(uniform).epsilon(0.10));
}

TEST_CASE("config validation") {
    ModelConfig cfg = toy_config();
    cfg.n_heads = 3;  // does not divide d_model=8
    CHECK_THROWS_AS(LanguageModel{cfg}, std::invalid_argument);
    cfg = toy_config();
    cfg.context_len = 1;
    CHECK_THROWS_AS(LanguageModel{cfg}, std::invalid_argument);
}

TEST_CASE("overlays: empty set and zero adapters equal the plain forward") {
    ModelConfig cfg = toy_config(5);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 5);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 6);

    const double plain = m.forward_loss(batch).item();
    CHECK(m.forward_loss(batch, {}, {}).item() == plain);

    auto adapters = make_lora_set(m, LayerSubset::all, 2, 16.0, 77);
    CHECK(m.forward_loss(batch, {}, adapters).item() == plain);  // zero-init U
}

TEST_CASE("overlay -W + W' behaves like replacing the matrix (model surgery)") {
    ModelConfig cfg = toy_config(6);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 7);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 8);

    const WeightId target{0, WeightName::mlp_in};
    LanguageModel surgery = m.clone();
    Rng rng(99);
    std::normal_distribution<double> d(0.0, 0.05);
    for (double& x : surgery.weight(target).mutable_data()) x = d(rng);

    Overlay o{target, Tensor::zeros(m.weight(target).shape())};
    for (int64_t i = 0; i < o.values.size(); ++i)
        o.values.mutable_data()[i] =
            surgery.weight(target).data()[i] - m.weight(target).data()[i];
    const Overlay ovs[1] = {o};
    CHECK(std::abs(m.forward_loss(batch, ovs).item() - surgery.forward_loss(batch).item()) <=
          1e-10);
}

TEST_CASE("full-rank adapter encoding a known delta equals the overlay") {
    ModelConfig cfg = toy_config(8);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 9);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 10);

    const WeightId target{1, WeightName::attn_v};
    const Tensor& w = m.weight(target);
    const int64_t dim = w.rows();

    Tensor delta = Tensor::zeros(w.shape());
    Rng rng(100);
    std::normal_distribution<double> d(0.0, 0.03);
    for (double& x : delta.mutable_data()) x = d(rng);

    // rank = d adapter: U = (r/alpha) * I row-scaled, V = delta
    LoraAdapter a;
    a.target = target;
    a.rank = static_cast<int>(dim);
    a.alpha = 16.0;
    a.u = Tensor::zeros({dim, dim}, true);
    for (int64_t i = 0; i < dim; ++i)
        a.u.at(i, i) = static_cast<double>(a.rank) / a.alpha;  // cancels the alpha/r scaling
    a.v = delta.clone();
    a.v.set_requires_grad(true);

    Overlay o{target, delta};
    const Overlay ovs[1] = {o};
    const LoraAdapter ads[1] = {a};
    CHECK(std::abs(m.forward_loss(batch, ovs).item() - m.forward_loss(batch, {}, ads).item()) <=
          1e-10);
}

TEST_CASE("merge_lora") {
    ModelConfig cfg = toy_config(12);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 13);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 14);

    SUBCASE("zero adapter leaves the model unchanged bitwise") {
        LanguageModel copy = m.clone();
        auto adapters = make_lora_set(copy, LayerSubset::all, 4, 16.0, 55);
        merge_lora(copy, adapters);
        CHECK(copy.weight_hash() == m.weight_hash());
    }

    SUBCASE("random rank-2 adapter: adapted and merged losses agree") {
        auto a = make_lora(m, {0, WeightName::mlp_in}, 2, 16.0, 56);
        Rng rng(57);
        std::normal_distribution<double> d(0.0, 0.05);
        for (double& x : a.u.mutable_data()) x = d(rng);
        const LoraAdapter ads[1] = {a};
        const double adapted = m.forward_loss(batch, {}, ads).item();
        LanguageModel merged = m.clone();
        merge_lora(merged, ads);
        CHECK(std::abs(adapted - merged.forward_loss(batch).item()) <= 1e-10);
    }

    SUBCASE("adapters on different targets merge order-invariantly") {
        auto a1 = make_lora(m, {0, WeightName::attn_q}, 2, 16.0, 58);
        auto a2 = make_lora(m, {1, WeightName::mlp_out}, 2, 16.0, 59);
        Rng rng(60);
        std::normal_distribution<double> d(0.0, 0.05);
        for (double& x : a1.u.mutable_data()) x = d(rng);
        for (double& x : a2.u.mutable_data()) x = d(rng);
        LanguageModel m1 = m.clone(), m2 = m.clone();
        const LoraAdapter fwd[2] = {a1, a2};
        const LoraAdapter rev[2] = {a2, a1};
        merge_lora(m1, fwd);
        merge_lora(m2, rev);
        CHECK(m1.weight_hash() == m2.weight_hash());
    }

    SUBCASE("duplicate targets are rejected") {
        auto a = make_lora(m, {0, WeightName::attn_q}, 2, 16.0, 61);
        const LoraAdapter dup[2] = {a, a};
        LanguageModel copy = m.clone();
        CHECK_THROWS_AS(merge_lora(copy, dup), std::invalid_argument);
    }
}

TEST_CASE("overlay additivity is exact") {
    ModelConfig cfg = toy_config(15);
    LanguageModel m(cfg);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 16);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 17);

    const WeightId target{0, WeightName::attn_k};
    Tensor z1 = Tensor::zeros(m.weight(target).shape());
    Tensor z2 = Tensor::zeros(m.weight(target).shape());
    Rng rng(18);
    std::normal_distribution<double> d(0.0, 0.02);
    for (double& x : z1.mutable_data()) x = d(rng);
    for (double& x : z2.mutable_data()) x = d(rng);
    Tensor zsum = Tensor::zeros(z1.shape());
    for (int64_t i = 0; i < z1.size(); ++i)
        zsum.mutable_data()[i] = z1.data()[i] + z2.data()[i];

    const Overlay both[2] = {{target, z1}, {target, z2}};
    const Overlay summed[1] = {{target, zsum}};
    CHECK(m.forward_loss(batch, both).item() == m.forward_loss(batch, summed).item());
}

TEST_CASE("base weights stay bitwise unchanged under overlay forwards/backwards") {
    ModelConfig cfg = toy_config(19);
    LanguageModel m(cfg);
    const uint64_t before = m.weight_hash();
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 20);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 21);

    auto adapters = make_lora_set(m, LayerSubset::all, 2, 16.0, 22);
    Tensor z = Tensor::zeros(m.weight({0, WeightName::attn_q}).shape());
    for (double& x : z.mutable_data()) x = 0.01;
    const Overlay ovs[1] = {{{0, WeightName::attn_q}, z}};

    for (int i = 0; i < 3; ++i) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = m.forward_loss(batch, ovs, adapters);
        tape.backward(loss);
    }
    CHECK(m.weight_hash() == before);
}

TEST_CASE("with the base frozen, backward populates only adapter grads") {
    ModelConfig cfg = toy_config(23);
    LanguageModel m(cfg);
    m.set_base_requires_grad(false);
    const auto tokens = make_toy_tokens(256, cfg.vocab_size, 24);
    Batch batch = sample_batch(tokens, 4, cfg.context_len - 1, 25);

    auto adapters = make_lora_set(m, LayerSubset::all, 2, 16.0, 26);
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = m.forward_loss(batch, {}, adapters);
        tape.backward(loss);
    }
    for (const WeightId& id : m.weight_ids()) CHECK_FALSE(m.weight(id).has_grad());
    double adapter_grad = 0.0;
    for (const auto& a : adapters) {
        for (double g : a.u.grad()) adapter_grad += std::abs(g);
        // v grads can flow only through u != 0; u is zero-init so check u only
    }
    CHECK(adapter_grad > 0.0);
}

TEST_CASE("perplexity") {
    ModelConfig cfg = toy_config(27, 11);
    cfg.context_len = 8;
    LanguageModel m(cfg);

    SUBCASE("uniform-logit model gives PPL = vocab_size") {
        for (const WeightId& id : m.weight_ids())
            for (double& x : m.weight(id).mutable_data()) x = 0.0;
        std::vector<int> corpus(64, 3);
        for (size_t i = 0; i < corpus.size(); ++i) corpus[i] = static_cast<int>(i % 11);
        const auto res = m.perplexity(corpus);
        CHECK(res.ppl == doctest::Approx(11.0).epsilon(1e-9));
    }

    SUBCASE("memorizing a repeated token drives PPL toward 1") {
        std::vector<int> corpus(512, 5);
        Corpus c;
        c.tokens = corpus;
        BaseTrainConfig tc;
        tc.max_steps = 250;
        tc.batch_size = 4;
        tc.lr = 1e-2;
        tc.seed = 1;
        train_base(m, c, tc);
        CHECK(m.perplexity(corpus).ppl < 1.1);
    }

    SUBCASE("PPL equals exp(mean NLL) recomputed by an independent pass") {
        const auto tokens = make_toy_tokens(8 * 13, cfg.vocab_size, 29);
        const auto res = m.perplexity(tokens, 4);

        // window-by-window recomputation with scalar accumulation
        double nll = 0.0;
        int64_t count = 0;
        const int t = cfg.context_len;
        for (size_t w = 0; w + t <= tokens.size(); w += t) {
            Batch b;
            b.batch = 1;
            b.seq = t - 1;
            b.inputs.assign(tokens.begin() + w, tokens.begin() + w + t - 1);
            b.targets.assign(tokens.begin() + w + 1, tokens.begin() + w + t);
            nll += m.forward_loss(b).item() * (t - 1);
            count += t - 1;
        }
        CHECK(std::abs(res.ppl - std::exp(nll / count)) <= 1e-9 * res.ppl);
    }

    SUBCASE("corpus shorter than one window is rejected") {
        std::vector<int> tiny(cfg.context_len - 1, 0);
        CHECK_THROWS_AS(m.perplexity(tiny), std::invalid_argument);
    }
}

TEST_CASE("checkpoint round-trip is bit-exact") {
    ModelConfig cfg = toy_config(31);
    LanguageModel m(cfg);
    const auto path = (std::filesystem::temp_directory_path() / "npft_model.ckpt").string();
    m.save(path);
    LanguageModel loaded = LanguageModel::load(path);
    CHECK(loaded.weight_hash() == m.weight_hash());
    CHECK(loaded.config().d_model == cfg.d_model);
    CHECK(loaded.config().seed == cfg.seed);
    std::remove(path.c_str());
}

TEST_CASE("training resume reproduces the next-step loss bitwise") {
    kernels::set_threads(1);
    ModelConfig cfg = toy_config(37);
    LanguageModel m(cfg);
    Corpus c;
    c.tokens = make_toy_tokens(2048, cfg.vocab_size, 38);

    BaseTrainConfig tc;
    tc.max_steps = 5;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = 39;
    tc.log_every = 1;

    m.set_base_requires_grad(true);
    std::vector<Tensor> params;
    for (const WeightId& id : m.weight_ids()) params.push_back(m.weight(id));
    Adam opt(params, AdamConfig{.lr = tc.lr});
    train_base(m, c, tc, 0, &opt);

    const auto path = (std::filesystem::temp_directory_path() / "npft_resume.ckpt").string();
    save_train_state(path, m, opt, 5);

    // continue in-process
    BaseTrainConfig tc6 = tc;
    tc6.max_steps = 6;
    auto cont = train_base(m, c, tc6, 5, &opt);

    // reload and take the same step
    LanguageModel m2 = LanguageModel::load(path);
    m2.set_base_requires_grad(true);
    std::vector<Tensor> params2;
    for (const WeightId& id : m2.weight_ids()) params2.push_back(m2.weight(id));
    Adam opt2(params2, AdamConfig{.lr = tc.lr});
    const int next = load_train_state(path, opt2);
    CHECK(next == 5);
    auto resumed = train_base(m2, c, tc6, next, &opt2);

    CHECK(cont.final_loss == resumed.final_loss);
    CHECK(m.weight_hash() == m2.weight_hash());
}

TEST_SUITE_END();
