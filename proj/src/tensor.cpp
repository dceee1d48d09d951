#include "elm/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elm/errors.hpp"

namespace elm {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw DimError("non-positive dimension in shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

thread_local Tape* g_active_tape = nullptr;
thread_local bool g_grad_enabled = true;

constexpr double kInvSqrt2 = 0.7071067811865476;
constexpr double kInvSqrt2Pi = 0.3989422804014327;
constexpr double kLogClamp = 1e-12;

double norm_cdf(double x) { return 0.5 * (1.0 + std::erf(x * kInvSqrt2)); }
double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

void check_finite(const Tensor& t, const char* op) {
    for (double v : t.data()) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
    }
}

}  // namespace

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    auto impl = std::make_shared<Impl>();
    std::size_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->data.assign(n, 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.data().begin(), t.data().end(), value);
    return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    if (n != data.size()) throw DimError("data length does not match shape");
    auto impl = std::make_shared<Impl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double scale, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = scale * rng.normal();
    return t;
}

int Tensor::rows() const {
    if (rank() != 2) throw DimError("rows() on non-matrix");
    return impl_->shape[0];
}
int Tensor::cols() const {
    if (rank() != 2) throw DimError("cols() on non-matrix");
    return impl_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw ContractError("item() on tensor with numel != 1");
    return impl_->data[0];
}

void Tensor::zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
    if (g.size() != impl_->data.size()) throw DimError("gradient size mismatch");
    auto& gr = grad();
    for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
}

// ---- tape ----

void Tape::record(Tensor output, std::function<void()> backward_fn) {
    nodes_.push_back(Node{std::move(output), std::move(backward_fn)});
}

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1) throw ContractError("backward requires a scalar loss");
    if (!loss.requires_grad()) {
        throw ContractError("backward target does not require grad (was it produced on this tape?)");
    }
    // Fresh walk: intermediates produced by this tape start from zero so a
    // second backward does not re-propagate stale gradients. Leaves are not
    // op outputs and keep accumulating.
    for (auto& n : nodes_) n.output.zero_grad();
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        if (it->backward_fn) it->backward_fn();
    }
}

TapeScope::TapeScope(Tape& tape) : prev_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

NoGradScope::NoGradScope() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradScope::~NoGradScope() { g_grad_enabled = prev_; }

Tape* active_tape() { return g_active_tape; }
bool grad_enabled() { return g_grad_enabled; }

namespace {

bool tracked(std::initializer_list<const Tensor*> inputs) {
    if (!g_grad_enabled || g_active_tape == nullptr) return false;
    for (const Tensor* t : inputs) {
        if (t->requires_grad()) return true;
    }
    return false;
}

void record_op(Tensor& out, std::function<void()> fn) {
    out.set_requires_grad(true);
    g_active_tape->record(out, std::move(fn));
}

}  // namespace

// ---- ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimError("matmul: inner dimensions disagree");
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    const double* pa = a.data().data();
    const double* pb = b.data().data();
    double* po = out.data().data();
    for (int i = 0; i < m; ++i) {
        for (int kk = 0; kk < k; ++kk) {
            const double av = pa[i * k + kk];
            if (av == 0.0) continue;
            const double* brow = pb + kk * n;
            double* orow = po + i * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    if (tracked({&a, &b})) {
        record_op(out, [a = a, b = b, out]() mutable {
            const int m2 = a.rows(), k2 = a.cols(), n2 = b.cols();
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                const auto& db = b.data();
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j) {
                        const double g = go[static_cast<std::size_t>(i) * n2 + j];
                        if (g == 0.0) continue;
                        for (int kk = 0; kk < k2; ++kk)
                            ga[static_cast<std::size_t>(i) * k2 + kk] += g * db[static_cast<std::size_t>(kk) * n2 + j];
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                const auto& da = a.data();
                for (int kk = 0; kk < k2; ++kk)
                    for (int i = 0; i < m2; ++i) {
                        const double av = da[static_cast<std::size_t>(i) * k2 + kk];
                        if (av == 0.0) continue;
                        for (int j = 0; j < n2; ++j)
                            gb[static_cast<std::size_t>(kk) * n2 + j] += av * go[static_cast<std::size_t>(i) * n2 + j];
                    }
            }
        });
    }
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.cols()) {
        throw DimError("matmul_nt: inner dimensions disagree");
    }
    const int m = a.rows(), k = a.cols(), n = b.rows();
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk) acc += a.at(i, kk) * b.at(j, kk);
            out.at(i, j) = acc;
        }
    if (tracked({&a, &b})) {
        record_op(out, [a = a, b = b, out]() mutable {
            const int m2 = a.rows(), k2 = a.cols(), n2 = b.rows();
            const auto& go = out.grad();
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j) {
                        const double g = go[static_cast<std::size_t>(i) * n2 + j];
                        if (g == 0.0) continue;
                        for (int kk = 0; kk < k2; ++kk) ga[static_cast<std::size_t>(i) * k2 + kk] += g * b.at(j, kk);
                    }
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j) {
                        const double g = go[static_cast<std::size_t>(i) * n2 + j];
                        if (g == 0.0) continue;
                        for (int kk = 0; kk < k2; ++kk) gb[static_cast<std::size_t>(j) * k2 + kk] += g * a.at(i, kk);
                    }
            }
        });
    }
    return out;
}

Tensor matmul_col_subset(const Tensor& a, const Tensor& w, std::span<const int> cols) {
    if (a.rank() != 2 || w.rank() != 2 || a.cols() != w.rows()) {
        throw DimError("matmul_col_subset: inner dimensions disagree");
    }
    const int m = a.rows(), k = a.cols(), wcols = w.cols();
    const int c = static_cast<int>(cols.size());
    for (int idx : cols) {
        if (idx < 0 || idx >= wcols) throw DimError("matmul_col_subset: column index out of range");
    }
    Tensor out = Tensor::zeros({m, c});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            const int wj = cols[static_cast<std::size_t>(j)];
            for (int kk = 0; kk < k; ++kk) acc += a.at(i, kk) * w.at(kk, wj);
            out.at(i, j) = acc;
        }
    if (tracked({&a, &w})) {
        std::vector<int> idx(cols.begin(), cols.end());
        record_op(out, [a = a, w = w, out, idx = std::move(idx)]() mutable {
            const int m2 = a.rows(), k2 = a.cols();
            const int c2 = static_cast<int>(idx.size());
            const auto& go = out.grad();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < c2; ++j) {
                    const double g = go[static_cast<std::size_t>(i) * c2 + j];
                    if (g == 0.0) continue;
                    const int wj = idx[static_cast<std::size_t>(j)];
                    if (a.requires_grad()) {
                        auto& ga = a.grad();
                        for (int kk = 0; kk < k2; ++kk) ga[static_cast<std::size_t>(i) * k2 + kk] += g * w.at(kk, wj);
                    }
                    if (w.requires_grad()) {
                        auto& gw = w.grad();
                        const int wc = w.cols();
                        for (int kk = 0; kk < k2; ++kk)
                            gw[static_cast<std::size_t>(kk) * wc + wj] += g * a.at(i, kk);
                    }
                }
        });
    }
    return out;
}

Tensor matmul_row_subset(const Tensor& h, const Tensor& w, std::span<const int> rows) {
    if (h.rank() != 2 || w.rank() != 2 || h.cols() != static_cast<int>(rows.size())) {
        throw DimError("matmul_row_subset: h columns must match row subset size");
    }
    const int m = h.rows(), c = h.cols(), n = w.cols();
    for (int idx : rows) {
        if (idx < 0 || idx >= w.rows()) throw DimError("matmul_row_subset: row index out of range");
    }
    Tensor out = Tensor::zeros({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < c; ++j) {
            const double hv = h.at(i, j);
            if (hv == 0.0) continue;
            const int wr = rows[static_cast<std::size_t>(j)];
            for (int jj = 0; jj < n; ++jj) out.at(i, jj) += hv * w.at(wr, jj);
        }
    if (tracked({&h, &w})) {
        std::vector<int> idx(rows.begin(), rows.end());
        record_op(out, [h = h, w = w, out, idx = std::move(idx)]() mutable {
            const int m2 = h.rows(), c2 = h.cols(), n2 = w.cols();
            const auto& go = out.grad();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < c2; ++j) {
                    const int wr = idx[static_cast<std::size_t>(j)];
                    double acc = 0.0;
                    for (int jj = 0; jj < n2; ++jj) {
                        const double g = go[static_cast<std::size_t>(i) * n2 + jj];
                        acc += g * w.at(wr, jj);
                        if (w.requires_grad() && g != 0.0) {
                            w.grad()[static_cast<std::size_t>(wr) * n2 + jj] += g * h.at(i, j);
                        }
                    }
                    if (h.requires_grad()) h.grad()[static_cast<std::size_t>(i) * c2 + j] += acc;
                }
        });
    }
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimError("add: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (tracked({&a, &b})) {
        record_op(out, [a = a, b = b, out]() mutable {
            const auto& go = out.grad();
            if (a.requires_grad()) a.accumulate_grad(go);
            if (b.requires_grad()) b.accumulate_grad(go);
        });
    }
    return out;
}

Tensor add_bias(const Tensor& x, const Tensor& b) {
    if (x.rank() != 2 || b.numel() != static_cast<std::size_t>(x.cols())) {
        throw DimError("add_bias: bias length must equal column count");
    }
    Tensor out = Tensor::zeros(x.shape());
    const int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) + b.data()[static_cast<std::size_t>(j)];
    if (tracked({&x, &b})) {
        record_op(out, [x = x, b = b, out]() mutable {
            const int m2 = out.rows(), n2 = out.cols();
            const auto& go = out.grad();
            if (x.requires_grad()) x.accumulate_grad(go);
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j) gb[static_cast<std::size_t>(j)] += go[static_cast<std::size_t>(i) * n2 + j];
            }
        });
    }
    return out;
}

Tensor add_bias_subset(const Tensor& x, const Tensor& b, std::span<const int> cols) {
    if (x.rank() != 2 || x.cols() != static_cast<int>(cols.size())) {
        throw DimError("add_bias_subset: x columns must match subset size");
    }
    Tensor out = Tensor::zeros(x.shape());
    const int m = x.rows(), n = x.cols();
    for (int j = 0; j < n; ++j) {
        const int bj = cols[static_cast<std::size_t>(j)];
        if (bj < 0 || static_cast<std::size_t>(bj) >= b.numel()) throw DimError("add_bias_subset: index out of range");
        for (int i = 0; i < m; ++i) out.at(i, j) = x.at(i, j) + b.data()[static_cast<std::size_t>(bj)];
    }
    if (tracked({&x, &b})) {
        std::vector<int> idx(cols.begin(), cols.end());
        record_op(out, [x = x, b = b, out, idx = std::move(idx)]() mutable {
            const int m2 = out.rows(), n2 = out.cols();
            const auto& go = out.grad();
            if (x.requires_grad()) x.accumulate_grad(go);
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (int i = 0; i < m2; ++i)
                    for (int j = 0; j < n2; ++j)
                        gb[static_cast<std::size_t>(idx[static_cast<std::size_t>(j)])] +=
                            go[static_cast<std::size_t>(i) * n2 + j];
            }
        });
    }
    return out;
}

Tensor scale(const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = c * x.data()[i];
    if (tracked({&x})) {
        record_op(out, [x = x, out, c]() mutable {
            if (!x.requires_grad()) return;
            auto& gx = x.grad();
            const auto& go = out.grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += c * go[i];
        });
    }
    return out;
}

Tensor gate_scale(const Tensor& x, const Tensor& gate, int index) {
    if (index < 0 || static_cast<std::size_t>(index) >= gate.numel()) {
        throw DimError("gate_scale: gate index out of range");
    }
    const double g = gate.data()[static_cast<std::size_t>(index)];
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) out.data()[i] = g * x.data()[i];
    if (tracked({&x, &gate})) {
        record_op(out, [x = x, gate = gate, out, index]() mutable {
            const auto& go = out.grad();
            const double gv = gate.data()[static_cast<std::size_t>(index)];
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (std::size_t i = 0; i < go.size(); ++i) gx[i] += gv * go[i];
            }
            if (gate.requires_grad()) {
                double acc = 0.0;
                for (std::size_t i = 0; i < go.size(); ++i) acc += go[i] * x.data()[i];
                gate.grad()[static_cast<std::size_t>(index)] += acc;
            }
        });
    }
    return out;
}

Tensor col_scale(const Tensor& x, const Tensor& v) {
    if (x.rank() != 2 || v.numel() != static_cast<std::size_t>(x.cols())) {
        throw DimError("col_scale: scale vector length must equal column count");
    }
    Tensor out = Tensor::zeros(x.shape());
    const int m = x.rows(), n = x.cols();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) * v.data()[static_cast<std::size_t>(j)];
    if (tracked({&x, &v})) {
        record_op(out, [x = x, v = v, out]() mutable {
            const int m2 = out.rows(), n2 = out.cols();
            const auto& go = out.grad();
            for (int i = 0; i < m2; ++i)
                for (int j = 0; j < n2; ++j) {
                    const double g = go[static_cast<std::size_t>(i) * n2 + j];
                    if (g == 0.0) continue;
                    if (x.requires_grad())
                        x.grad()[static_cast<std::size_t>(i) * n2 + j] += g * v.data()[static_cast<std::size_t>(j)];
                    if (v.requires_grad()) v.grad()[static_cast<std::size_t>(j)] += g * x.at(i, j);
                }
        });
    }
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw DimError("mul: shape mismatch");
    Tensor out = Tensor::zeros(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (tracked({&a, &b})) {
        record_op(out, [a = a, b = b, out]() mutable {
            const auto& go = out.grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                if (a.requires_grad()) a.grad()[i] += go[i] * b.data()[i];
                if (b.requires_grad()) b.grad()[i] += go[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor gelu(const Tensor& x) {
    check_finite(x, "gelu");
    Tensor out = Tensor::zeros(x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) {
        const double v = x.data()[i];
        out.data()[i] = v * norm_cdf(v);
    }
    if (tracked({&x})) {
        record_op(out, [x = x, out]() mutable {
            if (!x.requires_grad()) return;
            auto& gx = x.grad();
            const auto& go = out.grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const double v = x.data()[i];
                gx[i] += go[i] * (norm_cdf(v) + v * norm_pdf(v));
            }
        });
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    check_finite(x, "softmax");
    const int r = x.rank();
    if (!(axis == -1 || axis == r - 1)) throw DimError("softmax: only the last axis is supported");
    const int n = x.shape().back();
    const int rows = static_cast<int>(x.numel()) / n;
    Tensor out = Tensor::zeros(x.shape());
    for (int i = 0; i < rows; ++i) {
        const double* xi = x.data().data() + static_cast<std::size_t>(i) * n;
        double* oi = out.data().data() + static_cast<std::size_t>(i) * n;
        double mx = xi[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, xi[j]);
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            oi[j] = std::exp(xi[j] - mx);
            z += oi[j];
        }
        for (int j = 0; j < n; ++j) oi[j] /= z;
    }
    if (tracked({&x})) {
        record_op(out, [x = x, out, n, rows]() mutable {
            if (!x.requires_grad()) return;
            auto& gx = x.grad();
            const auto& go = out.grad();
            const auto& s = out.data();
            for (int i = 0; i < rows; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                double dotgs = 0.0;
                for (int j = 0; j < n; ++j) dotgs += go[base + j] * s[base + j];
                for (int j = 0; j < n; ++j) gx[base + j] += s[base + j] * (go[base + j] - dotgs);
            }
        });
    }
    return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() != 2) throw DimError("layer_norm: expects a matrix");
    const int m = x.rows(), n = x.cols();
    if (gain.numel() != static_cast<std::size_t>(n) || bias.numel() != static_cast<std::size_t>(n)) {
        throw DimError("layer_norm: gain/bias length must equal column count");
    }
    check_finite(x, "layer_norm");
    Tensor out = Tensor::zeros(x.shape());
    std::vector<double> inv_sigma(static_cast<std::size_t>(m));
    std::vector<double> xhat(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        double mean = 0.0;
        for (int j = 0; j < n; ++j) mean += x.at(i, j);
        mean /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = x.at(i, j) - mean;
            var += d * d;
        }
        var /= n;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sigma[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const double xh = (x.at(i, j) - mean) * is;
            xhat[static_cast<std::size_t>(i) * n + j] = xh;
            out.at(i, j) = gain.data()[static_cast<std::size_t>(j)] * xh + bias.data()[static_cast<std::size_t>(j)];
        }
    }
    if (tracked({&x, &gain, &bias})) {
        record_op(out, [x = x, gain = gain, bias = bias, out, inv_sigma = std::move(inv_sigma),
                        xhat = std::move(xhat), m, n]() mutable {
            const auto& go = out.grad();
            for (int i = 0; i < m; ++i) {
                const std::size_t base = static_cast<std::size_t>(i) * n;
                if (gain.requires_grad() || bias.requires_grad()) {
                    for (int j = 0; j < n; ++j) {
                        if (gain.requires_grad()) gain.grad()[static_cast<std::size_t>(j)] += go[base + j] * xhat[base + j];
                        if (bias.requires_grad()) bias.grad()[static_cast<std::size_t>(j)] += go[base + j];
                    }
                }
                if (x.requires_grad()) {
                    double mean_g = 0.0, mean_gx = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const double gj = go[base + j] * gain.data()[static_cast<std::size_t>(j)];
                        mean_g += gj;
                        mean_gx += gj * xhat[base + j];
                    }
                    mean_g /= n;
                    mean_gx /= n;
                    auto& gx = x.grad();
                    for (int j = 0; j < n; ++j) {
                        const double gj = go[base + j] * gain.data()[static_cast<std::size_t>(j)];
                        gx[base + j] += (gj - mean_g - xhat[base + j] * mean_gx) * inv_sigma[static_cast<std::size_t>(i)];
                    }
                }
            }
        });
    }
    return out;
}

Tensor kl_div(const Tensor& p, const Tensor& q) {
    if (p.shape() != q.shape()) throw DimError("kl_div: shape mismatch");
    if (p.rank() != 2) throw DimError("kl_div: expects row distributions");
    const int m = p.rows(), n = p.cols();
    for (std::size_t i = 0; i < p.numel(); ++i) {
        if (p.data()[i] < 0.0 || q.data()[i] < 0.0) throw DomainError("kl_div: negative probability");
        if (!std::isfinite(p.data()[i]) || !std::isfinite(q.data()[i])) throw NumericError("kl_div: non-finite input");
    }
    for (int i = 0; i < m; ++i) {
        double sp = 0.0, sq = 0.0;
        for (int j = 0; j < n; ++j) {
            sp += p.at(i, j);
            sq += q.at(i, j);
        }
        if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
            throw DomainError("kl_div: rows must sum to 1 within 1e-6");
        }
    }
    double acc = 0.0;
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            const double pv = p.at(i, j);
            if (pv <= 0.0) continue;
            const double qv = std::max(q.at(i, j), kLogClamp);
            acc += pv * (std::log(pv) - std::log(qv));
        }
    Tensor out = Tensor::scalar(acc / m);
    if (tracked({&p, &q})) {
        record_op(out, [p = p, q = q, out, m, n]() mutable {
            const double g = out.grad()[0] / m;
            if (g == 0.0) return;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) {
                    const double pv = p.at(i, j);
                    const double qv = std::max(q.at(i, j), kLogClamp);
                    if (p.requires_grad() && pv > 0.0) {
                        p.grad()[static_cast<std::size_t>(i) * n + j] += g * (std::log(pv) - std::log(qv) + 1.0);
                    }
                    if (q.requires_grad() && pv > 0.0 && q.at(i, j) > kLogClamp) {
                        q.grad()[static_cast<std::size_t>(i) * n + j] += -g * pv / qv;
                    }
                }
        });
    }
    return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> targets) {
    if (logits.rank() != 2 || static_cast<std::size_t>(logits.rows()) != targets.size()) {
        throw DimError("cross_entropy: one target per logits row required");
    }
    check_finite(logits, "cross_entropy");
    const int m = logits.rows(), n = logits.cols();
    int counted = 0;
    for (int t : targets) {
        if (t >= n) throw DomainError("cross_entropy: target index out of range");
        if (t >= 0) ++counted;
    }
    if (counted == 0) throw ContractError("cross_entropy: no targets to score");
    double acc = 0.0;
    std::vector<double> probs(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i) {
        const int t = targets[static_cast<std::size_t>(i)];
        if (t < 0) continue;
        double mx = logits.at(i, 0);
        for (int j = 1; j < n; ++j) mx = std::max(mx, logits.at(i, j));
        double z = 0.0;
        for (int j = 0; j < n; ++j) {
            const double e = std::exp(logits.at(i, j) - mx);
            probs[static_cast<std::size_t>(i) * n + j] = e;
            z += e;
        }
        for (int j = 0; j < n; ++j) probs[static_cast<std::size_t>(i) * n + j] /= z;
        acc += std::log(z) + mx - logits.at(i, t);
    }
    Tensor out = Tensor::scalar(acc / counted);
    if (tracked({&logits})) {
        std::vector<int> tgt(targets.begin(), targets.end());
        record_op(out, [logits = logits, out, probs = std::move(probs), tgt = std::move(tgt), m, n, counted]() mutable {
            if (!logits.requires_grad()) return;
            const double g = out.grad()[0] / counted;
            if (g == 0.0) return;
            auto& gx = logits.grad();
            for (int i = 0; i < m; ++i) {
                const int t = tgt[static_cast<std::size_t>(i)];
                if (t < 0) continue;
                for (int j = 0; j < n; ++j) {
                    double v = probs[static_cast<std::size_t>(i) * n + j];
                    if (j == t) v -= 1.0;
                    gx[static_cast<std::size_t>(i) * n + j] += g * v;
                }
            }
        });
    }
    return out;
}

Tensor sum_all(const Tensor& x) {
    double acc = 0.0;
    for (double v : x.data()) acc += v;
    Tensor out = Tensor::scalar(acc);
    if (tracked({&x})) {
        record_op(out, [x = x, out]() mutable {
            if (!x.requires_grad()) return;
            const double g = out.grad()[0];
            if (g == 0.0) return;
            auto& gx = x.grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
        });
    }
    return out;
}

Tensor dot(const Tensor& a, const Tensor& b) {
    if (a.numel() != b.numel()) throw DimError("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
    Tensor out = Tensor::scalar(acc);
    if (tracked({&a, &b})) {
        record_op(out, [a = a, b = b, out]() mutable {
            const double g = out.grad()[0];
            if (g == 0.0) return;
            for (std::size_t i = 0; i < a.numel(); ++i) {
                if (a.requires_grad()) a.grad()[i] += g * b.data()[i];
                if (b.requires_grad()) b.grad()[i] += g * a.data()[i];
            }
        });
    }
    return out;
}

Tensor pack_scalars(const std::vector<Tensor>& scalars) {
    if (scalars.empty()) throw ContractError("pack_scalars: nothing to pack");
    Tensor out = Tensor::zeros({1, static_cast<int>(scalars.size())});
    bool any_grad = false;
    for (std::size_t i = 0; i < scalars.size(); ++i) {
        if (scalars[i].numel() != 1) throw DimError("pack_scalars: inputs must be scalars");
        out.data()[i] = scalars[i].data()[0];
        any_grad = any_grad || scalars[i].requires_grad();
    }
    if (g_grad_enabled && g_active_tape != nullptr && any_grad) {
        auto copies = scalars;
        record_op(out, [out, copies = std::move(copies)]() mutable {
            const auto& go = out.grad();
            for (std::size_t i = 0; i < copies.size(); ++i) {
                if (copies[i].requires_grad()) copies[i].grad()[0] += go[i];
            }
        });
    }
    return out;
}

Tensor embed_rows(const Tensor& table, std::span<const int> ids) {
    if (table.rank() != 2) throw DimError("embed_rows: table must be a matrix");
    const int n = table.cols();
    Tensor out = Tensor::zeros({static_cast<int>(ids.size()), n});
    for (std::size_t r = 0; r < ids.size(); ++r) {
        const int id = ids[r];
        if (id < 0 || id >= table.rows()) throw DomainError("embed_rows: id out of range");
        for (int j = 0; j < n; ++j) out.at(static_cast<int>(r), j) = table.at(id, j);
    }
    if (tracked({&table})) {
        std::vector<int> idv(ids.begin(), ids.end());
        record_op(out, [table = table, out, idv = std::move(idv), n]() mutable {
            if (!table.requires_grad()) return;
            const auto& go = out.grad();
            auto& gt = table.grad();
            for (std::size_t r = 0; r < idv.size(); ++r)
                for (int j = 0; j < n; ++j)
                    gt[static_cast<std::size_t>(idv[r]) * n + j] += go[r * static_cast<std::size_t>(n) + j];
        });
    }
    return out;
}

Tensor take_row(const Tensor& x, int row) {
    if (x.rank() != 2 || row < 0 || row >= x.rows()) throw DimError("take_row: row out of range");
    const int n = x.cols();
    Tensor out = Tensor::zeros({1, n});
    for (int j = 0; j < n; ++j) out.at(0, j) = x.at(row, j);
    if (tracked({&x})) {
        record_op(out, [x = x, out, row, n]() mutable {
            if (!x.requires_grad()) return;
            const auto& go = out.grad();
            auto& gx = x.grad();
            for (int j = 0; j < n; ++j) gx[static_cast<std::size_t>(row) * n + j] += go[static_cast<std::size_t>(j)];
        });
    }
    return out;
}

double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         double epsilon, int max_probes_per_tensor, std::uint64_t probe_seed) {
    if (epsilon <= 0.0) throw ContractError("finite_diff_check: epsilon must be positive");
    for (auto& p : params) {
        p.set_requires_grad(true);
        p.zero_grad();
    }
    {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = f();
        tape.backward(loss);
    }
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    Rng rng(probe_seed);
    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& p = params[pi];
        std::vector<std::size_t> coords;
        if (max_probes_per_tensor <= 0 || static_cast<std::size_t>(max_probes_per_tensor) >= p.numel()) {
            coords.resize(p.numel());
            std::iota(coords.begin(), coords.end(), std::size_t{0});
        } else {
            auto picks = rng.sample_without_replacement(static_cast<int>(p.numel()), max_probes_per_tensor);
            coords.assign(picks.begin(), picks.end());
        }
        for (std::size_t c : coords) {
            const double saved = p.data()[c];
            double fp, fm;
            {
                NoGradScope ng;
                p.data()[c] = saved + epsilon;
                fp = f().item();
                p.data()[c] = saved - epsilon;
                fm = f().item();
                p.data()[c] = saved;
            }
            const double numeric = (fp - fm) / (2.0 * epsilon);
            const double err = std::abs(analytic[pi][c] - numeric) / (std::abs(numeric) + epsilon);
            worst = std::max(worst, err);
        }
    }
    return worst;
}

}  // namespace elm
