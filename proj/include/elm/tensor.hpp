#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "elm/rng.hpp"

namespace elm {

// Dense row-major tensor of doubles with optional gradient accumulator.
// Tensor is a cheap handle; copies share the underlying storage.
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    // Normal(0, scale) entries.
    static Tensor randn(std::vector<int> shape, Rng& rng, double scale, bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<int>& shape() const { return impl_->shape; }
    int rank() const { return static_cast<int>(impl_->shape.size()); }
    std::size_t numel() const { return impl_->data.size(); }
    int rows() const;  // rank-2 only
    int cols() const;  // rank-2 only

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    double item() const;  // numel()==1 only
    double at(int i, int j) const {
        return impl_->data[static_cast<std::size_t>(i) * static_cast<std::size_t>(impl_->shape[1]) +
                           static_cast<std::size_t>(j)];
    }
    double& at(int i, int j) {
        return impl_->data[static_cast<std::size_t>(i) * static_cast<std::size_t>(impl_->shape[1]) +
                           static_cast<std::size_t>(j)];
    }

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool rg) { impl_->requires_grad = rg; }
    // Allocated lazily; zero-filled on first access.
    std::vector<double>& grad() {
        if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
        return impl_->grad;
    }
    const std::vector<double>& grad() const { return const_cast<Tensor*>(this)->grad(); }
    bool has_grad() const { return !impl_->grad.empty(); }
    void zero_grad();
    void accumulate_grad(const std::vector<double>& g);

    // Identity of the underlying storage (for parameter bookkeeping).
    const void* id() const { return impl_.get(); }

  private:
    struct Impl {
        std::vector<int> shape;
        std::vector<double> data;
        bool requires_grad = false;
        std::vector<double> grad;  // empty until first use
    };
    std::shared_ptr<Impl> impl_;
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}
};

// Ordered record of one forward pass. Ops executed while a TapeScope is
// active append themselves; execution order is the topological order.
class Tape {
  public:
    // Output grads of intermediates are zeroed at the start of every walk, so
    // repeated backward calls over one tape accumulate only into leaves.
    void backward(const Tensor& loss);

    std::size_t size() const { return nodes_.size(); }

    // Used by op implementations.
    void record(Tensor output, std::function<void()> backward_fn);

  private:
    struct Node {
        Tensor output;
        std::function<void()> backward_fn;
    };
    std::vector<Node> nodes_;
};

// RAII: makes `tape` the recording target on this thread.
class TapeScope {
  public:
    explicit TapeScope(Tape& tape);
    ~TapeScope();
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape* prev_;
};

// RAII: disables recording (and requires_grad propagation) on this thread.
class NoGradScope {
  public:
    NoGradScope();
    ~NoGradScope();
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

  private:
    bool prev_;
};

Tape* active_tape();
bool grad_enabled();

// ---- primitive ops (all differentiable through the active tape) ----

Tensor matmul(const Tensor& a, const Tensor& b);
// a * b^T
Tensor matmul_nt(const Tensor& a, const Tensor& b);
// a * w[:, cols]; result has |cols| columns.
Tensor matmul_col_subset(const Tensor& a, const Tensor& w, std::span<const int> cols);
// h * w[rows, :]; h must have |rows| columns.
Tensor matmul_row_subset(const Tensor& h, const Tensor& w, std::span<const int> rows);

Tensor add(const Tensor& a, const Tensor& b);
// x + b broadcast over rows (b is length-cols vector).
Tensor add_bias(const Tensor& x, const Tensor& b);
// x + b[cols] broadcast over rows.
Tensor add_bias_subset(const Tensor& x, const Tensor& b, std::span<const int> cols);
Tensor scale(const Tensor& x, double c);
// gate[index] * x  (scalar gate element times tensor).
Tensor gate_scale(const Tensor& x, const Tensor& gate, int index);
// x[i,k] * v[k] for every row i.
Tensor col_scale(const Tensor& x, const Tensor& v);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor gelu(const Tensor& x);
// Row-wise softmax; `axis` must address the last axis.
Tensor softmax(const Tensor& x, int axis = -1);
// Row-wise: gain * (x - mean)/sqrt(var + eps) + bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-12);

// Mean over rows of sum_j p_j (log p_j - log q_j), q clamped at 1e-12.
Tensor kl_div(const Tensor& p, const Tensor& q);
// Mean over targets >= 0 of -log softmax(logits)[target].
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

Tensor sum_all(const Tensor& x);
Tensor dot(const Tensor& a, const Tensor& b);
// scalars packed into a 1 x n row (logits assembly).
Tensor pack_scalars(const std::vector<Tensor>& scalars);
// rows of table selected by ids (embedding gather).
Tensor embed_rows(const Tensor& table, std::span<const int> ids);
// single row as a 1 x cols tensor.
Tensor take_row(const Tensor& x, int row);

// Max over probed coordinates of |analytic - central difference| /
// (|central difference| + epsilon). Probes every coordinate when
// max_probes_per_tensor <= 0, otherwise a deterministic random subset.
double finite_diff_check(const std::function<Tensor()>& f, std::vector<Tensor> params,
                         double epsilon, int max_probes_per_tensor = 0,
                         std::uint64_t probe_seed = 17);

}  // namespace elm
