// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "support.hpp"

#include "npft/train.hpp"

namespace npft::test {

ConvergedToy make_converged_toy(int steps, uint64_t seed) {
    ConvergedToy out;
    ModelConfig cfg = toy_config(seed);
    out.model = LanguageModel(cfg);
    out.model.set_base_requires_grad(true);

    const auto tokens = make_toy_tokens(4096, cfg.vocab_size, derive_seed(seed, "toy-tokens"));
    out.batch = sample_batch(tokens, 8, cfg.context_len - 1, derive_seed(seed, "toy-batch"));

    std::vector<Tensor> params;
    for (const WeightId& id : out.model.weight_ids()) params.push_back(out.model.weight(id));
    Adam opt(params, AdamConfig{.lr = 3e-3});

    for (int s = 0; s < steps; ++s) {
        opt.zero_grad();
        Tape tape;
        {
            TapeScope scope(tape);
            Tensor loss = out.model.forward_loss(out.batch);
            out.final_loss = loss.item();
            tape.backward(loss);
        }
        opt.step();
    }
    // gradient norm at the end, for the convergence assumption
    opt.zero_grad();
    Tape tape;
    {
        TapeScope scope(tape);
        Tensor loss = out.model.forward_loss(out.batch);
        out.final_loss = loss.item();
        tape.backward(loss);
    }
    double sq = 0.0;
    for (const Tensor& p : params)
        for (double g : p.grad()) sq += g * g;
    out.grad_norm = std::sqrt(sq);
    out.model.zero_grads();
    out.model.set_base_requires_grad(false);
    return out;
}

}  // namespace npft::test
