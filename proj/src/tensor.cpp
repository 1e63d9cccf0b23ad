// Copyright (c) 2026 npft-lab contributors
// SPDX-License-Identifier: Apache-2.0
#include "npft/tensor.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <numeric>
#include <stdexcept>

#include "npft/kernels.hpp"

namespace npft {

namespace {

std::atomic<bool> g_check_finite{false};
thread_local Tape* t_active_tape = nullptr;

int64_t shape_numel(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: non-positive dimension");
        n *= d;
    }
    return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void check_finite_span(std::span<const double> v, const char* op) {
    for (double x : v) {
        if (!std::isfinite(x))
            throw std::runtime_error(std::string(op) + ": non-finite value");
    }
}

void maybe_check(const Tensor& t, const char* op) {
    if (g_check_finite.load(std::memory_order_relaxed)) check_finite_span(t.data(), op);
}

void add_into(std::span<double> dst, std::span<const double> src) {
    for (size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

bool should_record(const Tensor& out) { return Tape::active() != nullptr && out.requires_grad(); }

}  // namespace

Tensor wrap_state(std::shared_ptr<detail::TensorState> st) { return Tensor(std::move(st)); }

Tensor Tensor::zeros(std::vector<int64_t> shape, bool requires_grad) {
    auto st = std::make_shared<detail::TensorState>();
    const int64_t n = shape_numel(shape);
    st->shape = std::move(shape);
    st->data.assign(static_cast<size_t>(n), 0.0);
    st->requires_grad = requires_grad;
    return wrap_state(std::move(st));
}

Tensor Tensor::full(std::vector<int64_t> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& x : t.mutable_data()) x = value;
    return t;
}

Tensor Tensor::from_data(std::vector<int64_t> shape, std::vector<double> data,
                         bool requires_grad) {
    const int64_t n = shape_numel(shape);
    if (n != static_cast<int64_t>(data.size()))
        throw std::invalid_argument("tensor: data length does not match shape");
    auto st = std::make_shared<detail::TensorState>();
    st->shape = std::move(shape);
    st->data = std::move(data);
    st->requires_grad = requires_grad;
    return wrap_state(std::move(st));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_data({1}, {value}, requires_grad);
}

int64_t Tensor::rows() const {
    if (st_->shape.size() != 2) throw std::logic_error("tensor: rows() on non-2D tensor");
    return st_->shape[0];
}

int64_t Tensor::cols() const {
    if (st_->shape.size() != 2) throw std::logic_error("tensor: cols() on non-2D tensor");
    return st_->shape[1];
}

std::span<const double> Tensor::grad() const {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
    return st_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (st_->grad.empty()) st_->grad.assign(st_->data.size(), 0.0);
    return st_->grad;
}

void Tensor::zero_grad() {
    if (!st_->grad.empty()) std::fill(st_->grad.begin(), st_->grad.end(), 0.0);
}

double Tensor::item() const {
    if (st_->data.size() != 1) throw std::logic_error("tensor: item() on non-scalar");
    return st_->data[0];
}

Tensor Tensor::clone() const {
    auto st = std::make_shared<detail::TensorState>();
    st->shape = st_->shape;
    st->data = st_->data;
    st->requires_grad = st_->requires_grad;
    return wrap_state(std::move(st));
}

// ---- tape ----

Tape* Tape::active() noexcept { return t_active_tape; }

void Tape::record(std::function<void()> backward_fn) { ops_.push_back(std::move(backward_fn)); }

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw std::logic_error("tape: backward called twice without reset");
    if (!loss.defined() || loss.size() != 1)
        throw std::invalid_argument("tape: loss must be a scalar tensor");
    if (!loss.requires_grad())
        throw std::invalid_argument("tape: loss does not require grad");
    consumed_ = true;
    loss.state()->grad.assign(1, 1.0);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

void Tape::reset() {
    ops_.clear();
    consumed_ = false;
}

TapeScope::TapeScope(Tape& tape) : prev_(t_active_tape) { t_active_tape = &tape; }
TapeScope::~TapeScope() { t_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(t_active_tape) { t_active_tape = nullptr; }
NoGradScope::~NoGradScope() { t_active_tape = prev_; }

void set_check_finite(bool enabled) { g_check_finite.store(enabled); }
bool check_finite_enabled() { return g_check_finite.load(); }

// ---- primitives ----

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + bd[i];
    maybe_check(out, "add");
    if (should_record(out)) {
        auto as = a.state(), bs = b.state(), os = out.state();
        Tape::active()->record([as, bs, os] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (as->requires_grad) {
                if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
                add_into(as->grad, os->grad);
            }
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->data.size(), 0.0);
                add_into(bs->grad, os->grad);
            }
        });
    }
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "sub");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] - bd[i];
    maybe_check(out, "sub");
    if (should_record(out)) {
        auto as = a.state(), bs = b.state(), os = out.state();
        Tape::active()->record([as, bs, os] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (as->requires_grad) {
                if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
                add_into(as->grad, os->grad);
            }
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->data.size(), 0.0);
                for (size_t i = 0; i < bs->grad.size(); ++i) bs->grad[i] -= os->grad[i];
            }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "mul");
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad() || b.requires_grad());
    auto od = out.mutable_data();
    auto ad = a.data();
    auto bd = b.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * bd[i];
    maybe_check(out, "mul");
    if (should_record(out)) {
        auto as = a.state(), bs = b.state(), os = out.state();
        Tape::active()->record([as, bs, os] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (as->requires_grad) {
                if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
                for (size_t i = 0; i < as->grad.size(); ++i)
                    as->grad[i] += os->grad[i] * bs->data[i];
            }
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->data.size(), 0.0);
                for (size_t i = 0; i < bs->grad.size(); ++i)
                    bs->grad[i] += os->grad[i] * as->data[i];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& a, double c) {
    Tensor out = Tensor::zeros(a.shape(), a.requires_grad());
    auto od = out.mutable_data();
    auto ad = a.data();
    for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
    maybe_check(out, "scale");
    if (should_record(out)) {
        auto as = a.state(), os = out.state();
        Tape::active()->record([as, os, c] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
            for (size_t i = 0; i < as->grad.size(); ++i) as->grad[i] += os->grad[i] * c;
        });
    }
    return out;
}

namespace {

enum class MatKind { nn, nt, tn };

Tensor matmul_impl(const Tensor& a, const Tensor& b, MatKind kind) {
    const int64_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
    int m, k, n;
    switch (kind) {
        case MatKind::nn:
            if (ac != br) throw std::invalid_argument("matmul: inner dimension mismatch");
            m = static_cast<int>(ar), k = static_cast<int>(ac), n = static_cast<int>(bc);
            break;
        case MatKind::nt:
            if (ac != bc) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
            m = static_cast<int>(ar), k = static_cast<int>(ac), n = static_cast<int>(br);
            break;
        case MatKind::tn:
            if (ar != br) throw std::invalid_argument("matmul_tn: inner dimension mismatch");
            m = static_cast<int>(ac), k = static_cast<int>(ar), n = static_cast<int>(bc);
            break;
        default:
            throw std::logic_error("matmul: bad kind");
    }
    Tensor out = Tensor::zeros({m, n}, a.requires_grad() || b.requires_grad());
    switch (kind) {
        case MatKind::nn:
            kernels::matmul_nn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
            break;
        case MatKind::nt:
            kernels::matmul_nt(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
            break;
        case MatKind::tn:
            kernels::matmul_tn(a.data().data(), b.data().data(), out.mutable_data().data(), m, k, n);
            break;
    }
    maybe_check(out, "matmul");
    if (should_record(out)) {
        auto as = a.state(), bs = b.state(), os = out.state();
        Tape::active()->record([as, bs, os, kind, m, k, n] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            const double* g = os->grad.data();
            if (as->requires_grad) {
                if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
                switch (kind) {
                    case MatKind::nn:  // dA = dC * B^T
                        kernels::matmul_nt(g, bs->data.data(), as->grad.data(), m, n, k, true);
                        break;
                    case MatKind::nt:  // dA = dC * B
                        kernels::matmul_nn(g, bs->data.data(), as->grad.data(), m, n, k, true);
                        break;
                    case MatKind::tn:  // dA = B * dC^T   (A is [k,m])
                        kernels::matmul_nt(bs->data.data(), g, as->grad.data(), k, n, m, true);
                        break;
                }
            }
            if (bs->requires_grad) {
                if (bs->grad.empty()) bs->grad.assign(bs->data.size(), 0.0);
                switch (kind) {
                    case MatKind::nn:  // dB = A^T * dC
                        kernels::matmul_tn(as->data.data(), g, bs->grad.data(), k, m, n, true);
                        break;
                    case MatKind::nt:  // dB = dC^T * A   (B is [n,k])
                        kernels::matmul_tn(g, as->data.data(), bs->grad.data(), n, m, k, true);
                        break;
                    case MatKind::tn:  // dB = A * dC     (B is [k,n])
                        kernels::matmul_nn(as->data.data(), g, bs->grad.data(), k, m, n, true);
                        break;
                }
            }
        });
    }
    return out;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, MatKind::nn); }
Tensor matmul_nt(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, MatKind::nt); }
Tensor matmul_tn(const Tensor& a, const Tensor& b) { return matmul_impl(a, b, MatKind::tn); }

Tensor embedding_lookup(const Tensor& table, std::span<const int> ids) {
    const int64_t vocab = table.rows(), dim = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= vocab)
            throw std::out_of_range("embedding_lookup: token index out of range");
    }
    Tensor out = Tensor::zeros({static_cast<int64_t>(ids.size()), dim}, table.requires_grad());
    auto od = out.mutable_data();
    auto td = table.data();
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(od.data() + i * dim, td.data() + static_cast<size_t>(ids[i]) * dim,
                    sizeof(double) * dim);
    maybe_check(out, "embedding_lookup");
    if (should_record(out)) {
        auto ts = table.state(), os = out.state();
        std::vector<int> ids_copy(ids.begin(), ids.end());
        Tape::active()->record([ts, os, ids_copy = std::move(ids_copy), dim] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (ts->grad.empty()) ts->grad.assign(ts->data.size(), 0.0);
            for (size_t i = 0; i < ids_copy.size(); ++i) {
                double* dst = ts->grad.data() + static_cast<size_t>(ids_copy[i]) * dim;
                const double* src = os->grad.data() + i * dim;
                for (int64_t j = 0; j < dim; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, double eps) {
    const int64_t rows = x.rows(), cols = x.cols();
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    std::vector<double> inv_std(static_cast<size_t>(rows));
    auto od = out.mutable_data();
    auto xd = x.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = xd.data() + r * cols;
        double mu = 0.0;
        for (int64_t j = 0; j < cols; ++j) mu += xr[j];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (int64_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(r)] = is;
        double* orow = od.data() + r * cols;
        for (int64_t j = 0; j < cols; ++j) orow[j] = (xr[j] - mu) * is;
    }
    maybe_check(out, "layer_norm");
    if (should_record(out)) {
        auto xs = x.state(), os = out.state();
        Tape::active()->record([xs, os, inv_std = std::move(inv_std), rows, cols] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (xs->grad.empty()) xs->grad.assign(xs->data.size(), 0.0);
            for (int64_t r = 0; r < rows; ++r) {
                const double* y = os->data.data() + r * cols;
                const double* dy = os->grad.data() + r * cols;
                double* dx = xs->grad.data() + r * cols;
                double mean_dy = 0.0, mean_dyy = 0.0;
                for (int64_t j = 0; j < cols; ++j) {
                    mean_dy += dy[j];
                    mean_dyy += dy[j] * y[j];
                }
                mean_dy /= static_cast<double>(cols);
                mean_dyy /= static_cast<double>(cols);
                const double is = inv_std[static_cast<size_t>(r)];
                for (int64_t j = 0; j < cols; ++j)
                    dx[j] += is * (dy[j] - mean_dy - y[j] * mean_dyy);
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), x.requires_grad());
    auto od = out.mutable_data();
    auto xd = x.data();
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (size_t i = 0; i < od.size(); ++i)
        od[i] = 0.5 * xd[i] * (1.0 + std::erf(xd[i] * inv_sqrt2));
    maybe_check(out, "gelu");
    if (should_record(out)) {
        auto xs = x.state(), os = out.state();
        Tape::active()->record([xs, os] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (xs->grad.empty()) xs->grad.assign(xs->data.size(), 0.0);
            constexpr double inv_sqrt2pi = 0.39894228040143267794;
            for (size_t i = 0; i < xs->grad.size(); ++i) {
                const double xi = xs->data[i];
                const double cdf = 0.5 * (1.0 + std::erf(xi * 0.70710678118654752440));
                const double pdf = inv_sqrt2pi * std::exp(-0.5 * xi * xi);
                xs->grad[i] += os->grad[i] * (cdf + xi * pdf);
            }
        });
    }
    return out;
}

Tensor causal_self_attention(const Tensor& q, const Tensor& k, const Tensor& v, int batch,
                             int seq_len, int n_heads) {
    check_same_shape(q, k, "attention");
    check_same_shape(q, v, "attention");
    const int64_t d_model = q.cols();
    if (q.rows() != static_cast<int64_t>(batch) * seq_len)
        throw std::invalid_argument("attention: rows != batch*seq_len");
    if (d_model % n_heads != 0)
        throw std::invalid_argument("attention: d_model not divisible by n_heads");
    const int dh = static_cast<int>(d_model / n_heads);
    const double scl = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor out = Tensor::zeros(q.shape(), q.requires_grad() || k.requires_grad() || v.requires_grad());
    // softmax weights saved for backward: [batch*heads][T*T], causal lower triangle
    auto probs = std::make_shared<std::vector<double>>(
        static_cast<size_t>(batch) * n_heads * seq_len * seq_len, 0.0);

    const double* qd = q.data().data();
    const double* kd = k.data().data();
    const double* vd = v.data().data();
    double* od = out.mutable_data().data();

    const int nt = kernels::threads();
#pragma omp parallel for schedule(static) num_threads(nt) if (nt > 1 && batch * n_heads > 1)
    for (int bh = 0; bh < batch * n_heads; ++bh) {
        const int b = bh / n_heads;
        const int h = bh % n_heads;
        double* p = probs->data() + static_cast<size_t>(bh) * seq_len * seq_len;
        std::vector<double> scores(static_cast<size_t>(seq_len));
        for (int t = 0; t < seq_len; ++t) {
            const double* qrow = qd + (static_cast<size_t>(b) * seq_len + t) * d_model + h * dh;
            double maxs = -1e300;
            for (int u = 0; u <= t; ++u) {
                const double* krow = kd + (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                double s = 0.0;
                for (int j = 0; j < dh; ++j) s += qrow[j] * krow[j];
                s *= scl;
                scores[u] = s;
                if (s > maxs) maxs = s;
            }
            double denom = 0.0;
            for (int u = 0; u <= t; ++u) {
                const double e = std::exp(scores[u] - maxs);
                scores[u] = e;
                denom += e;
            }
            double* prow = p + static_cast<size_t>(t) * seq_len;
            double* orow = od + (static_cast<size_t>(b) * seq_len + t) * d_model + h * dh;
            for (int u = 0; u <= t; ++u) {
                const double w = scores[u] / denom;
                prow[u] = w;
                const double* vrow = vd + (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                for (int j = 0; j < dh; ++j) orow[j] += w * vrow[j];
            }
        }
    }
    maybe_check(out, "attention");

    if (should_record(out)) {
        auto qs = q.state(), ks = k.state(), vs = v.state(), os = out.state();
        Tape::active()->record([qs, ks, vs, os, probs, batch, seq_len, n_heads, dh, scl,
                                d_model] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (qs->requires_grad && qs->grad.empty()) qs->grad.assign(qs->data.size(), 0.0);
            if (ks->requires_grad && ks->grad.empty()) ks->grad.assign(ks->data.size(), 0.0);
            if (vs->requires_grad && vs->grad.empty()) vs->grad.assign(vs->data.size(), 0.0);
            std::vector<double> dp(static_cast<size_t>(seq_len));
            for (int bh = 0; bh < batch * n_heads; ++bh) {
                const int b = bh / n_heads;
                const int h = bh % n_heads;
                const double* p = probs->data() + static_cast<size_t>(bh) * seq_len * seq_len;
                for (int t = 0; t < seq_len; ++t) {
                    const double* go = os->grad.data() +
                                       (static_cast<size_t>(b) * seq_len + t) * d_model + h * dh;
                    const double* prow = p + static_cast<size_t>(t) * seq_len;
                    // dP and dV
                    double dot_dp_p = 0.0;
                    for (int u = 0; u <= t; ++u) {
                        const double* vrow =
                            vs->data.data() + (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                        double acc = 0.0;
                        for (int j = 0; j < dh; ++j) acc += go[j] * vrow[j];
                        dp[u] = acc;
                        dot_dp_p += acc * prow[u];
                        if (vs->requires_grad) {
                            double* dv = vs->grad.data() +
                                         (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                            for (int j = 0; j < dh; ++j) dv[j] += prow[u] * go[j];
                        }
                    }
                    // dS -> dQ, dK
                    const double* qrow =
                        qs->data.data() + (static_cast<size_t>(b) * seq_len + t) * d_model + h * dh;
                    double* dq = qs->requires_grad
                                     ? qs->grad.data() +
                                           (static_cast<size_t>(b) * seq_len + t) * d_model + h * dh
                                     : nullptr;
                    for (int u = 0; u <= t; ++u) {
                        const double ds = prow[u] * (dp[u] - dot_dp_p) * scl;
                        const double* krow =
                            ks->data.data() + (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                        if (dq != nullptr)
                            for (int j = 0; j < dh; ++j) dq[j] += ds * krow[j];
                        if (ks->requires_grad) {
                            double* dk = ks->grad.data() +
                                         (static_cast<size_t>(b) * seq_len + u) * d_model + h * dh;
                            for (int j = 0; j < dh; ++j) dk[j] += ds * qrow[j];
                        }
                    }
                }
            }
        });
    }
    return out;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> targets) {
    const int64_t n = logits.rows(), vocab = logits.cols();
    if (n != static_cast<int64_t>(targets.size()))
        throw std::invalid_argument("softmax_cross_entropy: targets length mismatch");
    for (int t : targets) {
        if (t < 0 || t >= vocab)
            throw std::out_of_range("softmax_cross_entropy: target index out of range");
    }
    auto probs = std::make_shared<std::vector<double>>(logits.data().begin(), logits.data().end());
    const double* ld = logits.data().data();
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const double* row = ld + i * vocab;
        double* prow = probs->data() + i * vocab;
        double maxv = row[0];
        for (int64_t j = 1; j < vocab; ++j) maxv = std::max(maxv, row[j]);
        double denom = 0.0;
        for (int64_t j = 0; j < vocab; ++j) {
            const double e = std::exp(row[j] - maxv);
            prow[j] = e;
            denom += e;
        }
        const double inv = 1.0 / denom;
        for (int64_t j = 0; j < vocab; ++j) prow[j] *= inv;
        total += -(row[targets[i]] - maxv - std::log(denom));
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(n), logits.requires_grad());
    maybe_check(out, "softmax_cross_entropy");
    if (should_record(out)) {
        auto ls = logits.state(), os = out.state();
        std::vector<int> tgt(targets.begin(), targets.end());
        Tape::active()->record([ls, os, probs, tgt = std::move(tgt), n, vocab] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (ls->grad.empty()) ls->grad.assign(ls->data.size(), 0.0);
            const double g = os->grad[0] / static_cast<double>(n);
            for (int64_t i = 0; i < n; ++i) {
                const double* prow = probs->data() + i * vocab;
                double* dst = ls->grad.data() + i * vocab;
                for (int64_t j = 0; j < vocab; ++j) dst[j] += g * prow[j];
                dst[tgt[i]] -= g;
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    double total = 0.0;
    for (double x : a.data()) total += x;
    Tensor out = Tensor::scalar(total, a.requires_grad());
    maybe_check(out, "sum");
    if (should_record(out)) {
        auto as = a.state(), os = out.state();
        Tape::active()->record([as, os] {
            if (os->grad.empty()) return;  // dangling branch, no contribution
            if (as->grad.empty()) as->grad.assign(as->data.size(), 0.0);
            const double g = os->grad[0];
            for (double& x : as->grad) x += g;
        });
    }
    return out;
}

}  // namespace npft
