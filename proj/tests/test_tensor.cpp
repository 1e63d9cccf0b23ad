// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <random>

#include "npft/kernels.hpp"
#include "npft/tensor.hpp"
#include "support.hpp"

using namespace npft;
using npft::test::fd_grad;
using npft::test::max_rel_error;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint64_t seed, bool rg = false,
                     double scl = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> d(0.0, scl);
    Tensor t = Tensor::zeros(std::move(shape), rg);
    for (double& x : t.mutable_data()) x = d(rng);
    return t;
}

}  // namespace

TEST_SUITE_BEGIN("tensor");

TEST_CASE("matmul with the identity returns the input") {
    Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
    Tensor m = random_tensor({2, 2}, 5);
    Tensor out = matmul(eye, m);
    for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == m.data()[i]);
}

TEST_CASE("cross entropy of uniform logits is ln(vocab)") {
    const int vocab = 37, n = 6;
    Tensor logits = Tensor::full({n, vocab}, 0.42);
    std::vector<int> targets = {0, 5, 36, 1, 2, 3};
    Tensor loss = softmax_cross_entropy(logits, targets);
    CHECK(loss.item() == doctest::Approx(std::log(static_cast<double>(vocab))).epsilon(1e-12));
}

TEST_CASE("gelu and layer_norm match a scalar reimplementation") {
    Tensor x = random_tensor({3, 4}, 9);

    Tensor g = gelu(x);
    for (int64_t i = 0; i < x.size(); ++i) {
        const double v = x.data()[i];
        const double want = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
        CHECK(std::abs(g.data()[i] - want) <= 1e-12);
    }

    Tensor ln = layer_norm(x);
    for (int64_t r = 0; r < 3; ++r) {
        double mu = 0.0;
        for (int64_t c = 0; c < 4; ++c) mu += x.at(r, c);
        mu /= 4.0;
        double var = 0.0;
        for (int64_t c = 0; c < 4; ++c) var += (x.at(r, c) - mu) * (x.at(r, c) - mu);
        var /= 4.0;
        for (int64_t c = 0; c < 4; ++c) {
            const double want = (x.at(r, c) - mu) / std::sqrt(var + 1e-5);
            CHECK(std::abs(ln.at(r, c) - want) <= 1e-12);
        }
    }
}

TEST_CASE("backward of sum gives all-ones, of half-norm-squared gives W") {
    Tensor w = random_tensor({4, 3}, 13, true);
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = sum(w);
        tape.backward(loss);
        for (double g : w.grad()) CHECK(g == 1.0);
    }
    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = scale(sum(mul(w, w)), 0.5);
        tape.backward(loss);
        for (int64_t i = 0; i < w.size(); ++i)
            CHECK(w.grad()[i] == doctest::Approx(w.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("gradient check: every primitive against central finite differences") {
    // >= 100 seeds spread across the primitives
    for (uint64_t seed = 0; seed < 110; ++seed) {
        Tensor a = random_tensor({3, 4}, 1000 + seed, true);
        Tensor b = random_tensor({3, 4}, 2000 + seed, true);
        Tensor m1 = random_tensor({3, 5}, 3000 + seed, true);
        Tensor m2 = random_tensor({5, 4}, 4000 + seed, true);
        Tensor table = random_tensor({7, 4}, 5000 + seed, true);
        std::vector<int> ids = {1, 0, 6, 3};
        std::vector<int> targets = {2, 0, 1};

        // a weighting tensor makes the loss non-symmetric in every element
        Tensor wts = random_tensor({3, 4}, 6000 + seed);
        Tensor wts4 = random_tensor({4, 4}, 6500 + seed);

        struct Case {
            const char* name;
            std::function<Tensor()> run;
            Tensor wrt;
        };
        const int which = static_cast<int>(seed % 8);
        std::function<Tensor()> run;
        Tensor wrt;
        switch (which) {
            case 0:
                run = [&] { return sum(mul(add(a, b), wts)); };
                wrt = a;
                break;
            case 1:
                run = [&] { return sum(mul(sub(a, b), wts)); };
                wrt = b;
                break;
            case 2:
                run = [&] { return sum(mul(mul(a, b), wts)); };
                wrt = a;
                break;
            case 3:
                run = [&] { return sum(mul(matmul(m1, m2), wts)); };
                wrt = m1;
                break;
            case 4:
                run = [&] { return sum(mul(matmul(m1, m2), wts)); };
                wrt = m2;
                break;
            case 5:
                run = [&] { return sum(mul(gelu(a), wts)); };
                wrt = a;
                break;
            case 6:
                run = [&] { return sum(mul(layer_norm(a), wts)); };
                wrt = a;
                break;
            case 7:
                run = [&] { return sum(mul(embedding_lookup(table, ids), wts4)); };
                wrt = table;
                break;
        }

        wrt.zero_grad();
        Tape tape;
        {
            TapeScope scope(tape);
            tape.backward(run());
        }
        std::vector<double> got(wrt.grad().begin(), wrt.grad().end());
        auto want = fd_grad(wrt, [&] { return run().item(); });
        CHECK(max_rel_error(got, want, 1e-6) < 1e-4);
    }
}

TEST_CASE("gradient check: attention and cross entropy") {
    for (uint64_t seed = 0; seed < 12; ++seed) {
        const int batch = 2, seq = 3, heads = 2, d = 4;
        Tensor q = random_tensor({batch * seq, d}, 100 + seed, true);
        Tensor k = random_tensor({batch * seq, d}, 200 + seed, true);
        Tensor v = random_tensor({batch * seq, d}, 300 + seed, true);
        Tensor wts = random_tensor({batch * seq, d}, 400 + seed);
        std::vector<int> targets = {1, 0, 3, 2, 1, 0};
        Tensor logits = random_tensor({batch * seq, 5}, 500 + seed, true);

        auto attn_loss = [&] {
            return sum(mul(causal_self_attention(q, k, v, batch, seq, heads), wts));
        };
        for (Tensor* p : {&q, &k, &v}) {
            p->zero_grad();
            Tape tape;
            {
                TapeScope scope(tape);
                tape.backward(attn_loss());
            }
            std::vector<double> got(p->grad().begin(), p->grad().end());
            auto want = fd_grad(*p, [&] { return attn_loss().item(); });
            CHECK(max_rel_error(got, want, 1e-6) < 1e-4);
        }

        auto ce_loss = [&] { return softmax_cross_entropy(logits, targets); };
        logits.zero_grad();
        Tape tape;
        {
            TapeScope scope(tape);
            tape.backward(ce_loss());
        }
        std::vector<double> got(logits.grad().begin(), logits.grad().end());
        auto want = fd_grad(logits, [&] { return ce_loss().item(); });
        CHECK(max_rel_error(got, want, 1e-6) < 1e-4);
    }
}

TEST_CASE("random 2-layer MLP gradients match finite differences") {
    Tensor w1 = random_tensor({6, 5}, 41, true);
    Tensor w2 = random_tensor({4, 6}, 42, true);
    Tensor x = random_tensor({3, 5}, 43);
    std::vector<int> targets = {1, 3, 0};

    auto loss_fn = [&] {
        return softmax_cross_entropy(matmul_nt(gelu(matmul_nt(x, w1)), w2), targets);
    };
    for (Tensor* p : {&w1, &w2}) {
        p->zero_grad();
        Tape tape;
        {
            TapeScope scope(tape);
            tape.backward(loss_fn());
        }
        std::vector<double> got(p->grad().begin(), p->grad().end());
        auto want = fd_grad(*p, [&] { return loss_fn().item(); });
        CHECK(max_rel_error(got, want, 1e-6) < 1e-4);
    }
}

TEST_CASE("backward is linear in the loss") {
    Tensor w = random_tensor({4, 4}, 55, true);
    Tensor c1 = random_tensor({4, 4}, 56);
    Tensor c2 = random_tensor({4, 4}, 57);
    const double a = 1.7, b = -0.3;

    auto l1 = [&] { return sum(mul(w, c1)); };
    auto l2 = [&] { return sum(mul(gelu(w), c2)); };

    std::vector<double> g1, g2, gc;
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(l1());
        g1.assign(w.grad().begin(), w.grad().end());
    }
    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(l2());
        g2.assign(w.grad().begin(), w.grad().end());
    }
    w.zero_grad();
    {
        Tape tape;
        TapeScope scope(tape);
        tape.backward(add(scale(l1(), a), scale(l2(), b)));
        gc.assign(w.grad().begin(), w.grad().end());
    }
    for (size_t i = 0; i < gc.size(); ++i)
        CHECK(std::abs(gc[i] - (a * g1[i] + b * g2[i])) <= 1e-12);
}

TEST_CASE("identical seed and single-thread mode give bitwise-identical results") {
    kernels::set_threads(1);
    auto run = [] {
        Tensor w1 = random_tensor({6, 5}, 71, true);
        Tensor w2 = random_tensor({4, 6}, 72, true);
        Tensor x = random_tensor({3, 5}, 73);
        std::vector<int> targets = {1, 3, 0};
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = softmax_cross_entropy(matmul_nt(gelu(matmul_nt(x, w1)), w2), targets);
        tape.backward(loss);
        std::vector<double> out;
        out.push_back(loss.item());
        out.insert(out.end(), w1.grad().begin(), w1.grad().end());
        out.insert(out.end(), w2.grad().begin(), w2.grad().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("error paths") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({3, 2});
    CHECK_THROWS_AS(add(a, b), std::invalid_argument);
    CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);

    Tensor table = Tensor::zeros({4, 2});
    std::vector<int> bad = {4};
    CHECK_THROWS_AS(embedding_lookup(table, bad), std::out_of_range);

    Tensor logits = Tensor::zeros({2, 3});
    std::vector<int> bad_tgt = {0, 3};
    CHECK_THROWS_AS(softmax_cross_entropy(logits, bad_tgt), std::out_of_range);

    // backward requires a scalar and can only run once per tape
    Tensor w = random_tensor({2, 2}, 80, true);
    Tape tape;
    Tensor loss;
    {
        TapeScope scope(tape);
        loss = sum(w);
    }
    Tensor not_scalar = Tensor::zeros({2}, true);
    CHECK_THROWS_AS(tape.backward(not_scalar), std::invalid_argument);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), std::logic_error);
    tape.reset();

    // checked mode flags non-finite values
    set_check_finite(true);
    Tensor inf = Tensor::from_data({1}, {1e308});
    CHECK_THROWS_AS(mul(inf, inf), std::runtime_error);
    set_check_finite(false);
}

TEST_SUITE_END();
