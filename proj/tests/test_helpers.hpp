#pragma once

#include <cmath>
#include <vector>

#include "elm/model.hpp"
#include "elm/rng.hpp"
#include "elm/tensor.hpp"

namespace elm::test {

// Independent triple-loop matrix product, kept deliberately naive.
inline std::vector<double> matmul_oracle(const std::vector<double>& a, const std::vector<double>& b,
                                         int m, int k, int n) {
    std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int kk = 0; kk < k; ++kk)
                acc += a[static_cast<std::size_t>(i) * k + kk] * b[static_cast<std::size_t>(kk) * n + j];
            c[static_cast<std::size_t>(i) * n + j] = acc;
        }
    return c;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = false) {
    Tensor t = Tensor::zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = rng.uniform(lo, hi);
    return t;
}

// Row-stochastic matrix with strictly positive entries.
inline Tensor random_row_stochastic(int rows, int cols, Rng& rng) {
    Tensor t = Tensor::zeros({rows, cols});
    for (int i = 0; i < rows; ++i) {
        double sum = 0.0;
        for (int j = 0; j < cols; ++j) {
            const double v = 0.05 + rng.uniform();
            t.at(i, j) = v;
            sum += v;
        }
        for (int j = 0; j < cols; ++j) t.at(i, j) /= sum;
    }
    return t;
}

// Small config that keeps gradient checks fast.
inline ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.hidden_dim = 16;
    cfg.n_heads = 4;
    cfg.head_dim = 4;
    cfg.ffn_dim = 24;
    cfg.vocab_size = 48;
    cfg.max_seq_len = 12;
    cfg.relation_heads = 4;
    cfg.relation_dim = 4;
    return cfg;
}

// Tiny config that can ingest byte-level text (printable ASCII).
inline ModelConfig tiny_text_config() {
    ModelConfig cfg = tiny_config();
    cfg.vocab_size = 128;
    return cfg;
}

// The desk-scale configuration used by the pipeline.
inline ModelConfig desk_config() {
    ModelConfig cfg;
    cfg.n_layers = 4;
    cfg.hidden_dim = 64;
    cfg.n_heads = 8;
    cfg.head_dim = 8;
    cfg.ffn_dim = 256;
    cfg.vocab_size = 256;
    cfg.max_seq_len = 64;
    cfg.relation_heads = 8;
    cfg.relation_dim = 8;
    return cfg;
}

inline ElasticModel full_model(const ModelConfig& cfg, std::uint64_t seed = 11) {
    Submap submap;
    submap.entries.push_back(SubStructure::full(100, cfg));
    return ElasticModel(cfg, submap, seed);
}

// A fixed nested two-level submap for structure tests: half the heads and
// neurons at the small level.
inline Submap two_level_submap(const ModelConfig& cfg) {
    Submap submap;
    submap.entries.push_back(SubStructure::full(100, cfg));
    SubStructure small;
    small.level_label = 50;
    small.head_sets.resize(static_cast<std::size_t>(cfg.n_layers));
    small.neuron_sets.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; h += 2) small.head_sets[static_cast<std::size_t>(l)].push_back(h);
        for (int i = 0; i < cfg.ffn_dim; i += 2) small.neuron_sets[static_cast<std::size_t>(l)].push_back(i);
    }
    submap.entries.push_back(small);
    return submap;
}

inline std::vector<int> random_tokens(const ModelConfig& cfg, int len, Rng& rng) {
    std::vector<int> toks(static_cast<std::size_t>(len));
    toks[0] = 1;  // [CLS]
    for (int i = 1; i < len; ++i) toks[static_cast<std::size_t>(i)] = 4 + rng.below_int(cfg.vocab_size - 4);
    return toks;
}

}  // namespace elm::test
