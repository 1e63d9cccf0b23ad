// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Dense 64-bit tensors with reverse-mode autodiff on a dynamic tape.
// Ops record a backward closure on the active Tape (see TapeScope) whenever
// any input requires grad. Without an active tape, ops are plain math.

namespace npft {

namespace detail {
struct TensorState {
    std::vector<int64_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated on first use, same length as data
    bool requires_grad = false;
};
}  // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int64_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<int64_t> shape, double value, bool requires_grad = false);
    static Tensor from_data(std::vector<int64_t> shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return static_cast<bool>(st_); }
    const std::vector<int64_t>& shape() const { return st_->shape; }
    int64_t size() const { return static_cast<int64_t>(st_->data.size()); }
    int64_t rows() const;  // 2-D only
    int64_t cols() const;

    std::span<const double> data() const { return st_->data; }
    std::span<double> mutable_data() { return st_->data; }
    double at(int64_t r, int64_t c) const { return st_->data[r * cols() + c]; }
    double& at(int64_t r, int64_t c) { return st_->data[r * cols() + c]; }

    bool requires_grad() const { return st_->requires_grad; }
    void set_requires_grad(bool rg) { st_->requires_grad = rg; }

    bool has_grad() const { return !st_->grad.empty(); }
    std::span<const double> grad() const;  // allocates zeros if absent
    std::span<double> mutable_grad();
    void zero_grad();

    double item() const;  // scalar tensors only

    Tensor clone() const;  // deep copy of values; grad not copied

    // identity (shared state) comparison, for parameter bookkeeping
    bool same_as(const Tensor& other) const { return st_ == other.st_; }

    std::shared_ptr<detail::TensorState> state() const { return st_; }

  private:
    explicit Tensor(std::shared_ptr<detail::TensorState> st) : st_(std::move(st)) {}
    std::shared_ptr<detail::TensorState> st_;
    friend Tensor wrap_state(std::shared_ptr<detail::TensorState>);
};

class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Runs the recorded ops in reverse, accumulating grads into every
    // requires_grad tensor reachable from `loss`. One shot: call reset()
    // before reusing the tape.
    void backward(const Tensor& loss);

    void record(std::function<void()> backward_fn);
    size_t num_ops() const { return ops_.size(); }
    void reset();

    static Tape* active() noexcept;

  private:
    std::vector<std::function<void()>> ops_;
    bool consumed_ = false;
};

// RAII: makes a tape the active recording target for the current thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// RAII: suspends recording (plain-math forwards inside a training step).
class NoGradScope {
  public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

  private:
    Tape* prev_;
};

// When enabled, every op output is scanned for NaN/Inf and throws on hit.
void set_check_finite(bool enabled);
bool check_finite_enabled();

// ---- primitives ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor matmul(const Tensor& a, const Tensor& b);     // [M,K]x[K,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M,K]x[N,K]^T
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // [K,M]^T x [K,N]

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids);
Tensor layer_norm(const Tensor& x, double eps = 1e-5);
Tensor gelu(const Tensor& x);
Tensor causal_self_attention(const Tensor& q, const Tensor& k, const Tensor& v, int batch,
                             int seq_len, int n_heads);
// mean negative log-likelihood over all targets
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets);
Tensor sum(const Tensor& a);

}  // namespace npft
