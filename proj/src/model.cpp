#include "elm/model.hpp"

#include <algorithm>
#include <cmath>

#include "elm/errors.hpp"

namespace elm {

void ModelConfig::validate() const {
    if (n_layers < 1 || hidden_dim < 1 || n_heads < 1 || head_dim < 1 || ffn_dim < 1 ||
        vocab_size < 1 || max_seq_len < 1 || relation_heads < 1 || relation_dim < 1 || n_classes < 1) {
        throw ConfigError("all config fields must be >= 1");
    }
    // Full-width models tile the hidden dim exactly; a compacted parameter
    // store (student after head pruning) keeps hidden_dim and stores fewer
    // heads, so undershoot is allowed.
    if (n_heads * head_dim > hidden_dim) {
        throw ConfigError("n_heads * head_dim must not exceed hidden_dim");
    }
    if (hidden_dim % head_dim != 0) {
        throw ConfigError("head_dim must divide hidden_dim");
    }
    if ((n_heads * head_dim) % relation_heads != 0) {
        throw ConfigError("relation_heads must divide the merged attention dimension");
    }
}

void SubStructure::validate(int n_layers, int n_heads, int ffn_dim) const {
    if (static_cast<int>(head_sets.size()) != n_layers ||
        static_cast<int>(neuron_sets.size()) != n_layers) {
        throw StructureError("per-layer index sets must cover every layer");
    }
    auto check = [](const std::vector<int>& v, int limit, const char* what) {
        if (v.empty()) throw StructureError(std::string("empty ") + what + " set");
        int prev = -1;
        for (int i : v) {
            if (i <= prev) throw StructureError(std::string(what) + " set not sorted ascending / has duplicates");
            if (i < 0 || i >= limit) throw StructureError(std::string(what) + " index out of range");
            prev = i;
        }
    };
    for (int l = 0; l < n_layers; ++l) {
        check(head_sets[static_cast<std::size_t>(l)], n_heads, "head");
        check(neuron_sets[static_cast<std::size_t>(l)], ffn_dim, "neuron");
    }
}

SubStructure SubStructure::full(int level_label, const ModelConfig& cfg) {
    SubStructure s;
    s.level_label = level_label;
    s.head_sets.resize(static_cast<std::size_t>(cfg.n_layers));
    s.neuron_sets.resize(static_cast<std::size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        for (int h = 0; h < cfg.n_heads; ++h) s.head_sets[static_cast<std::size_t>(l)].push_back(h);
        for (int i = 0; i < cfg.ffn_dim; ++i) s.neuron_sets[static_cast<std::size_t>(l)].push_back(i);
    }
    return s;
}

namespace {

bool subset_of(const std::vector<int>& small, const std::vector<int>& big) {
    return std::includes(big.begin(), big.end(), small.begin(), small.end());
}

}  // namespace

void Submap::validate(const ModelConfig& cfg) const {
    if (entries.empty()) throw StructureError("submap has no entries");
    int prev_label = 101;
    for (std::size_t k = 0; k < entries.size(); ++k) {
        const auto& s = entries[k];
        s.validate(cfg.n_layers, cfg.n_heads, cfg.ffn_dim);
        if (s.level_label >= prev_label) throw StructureError("level labels must be strictly decreasing");
        prev_label = s.level_label;
        if (k > 0) {
            const auto& bigger = entries[k - 1];
            for (int l = 0; l < cfg.n_layers; ++l) {
                if (!subset_of(s.head_sets[static_cast<std::size_t>(l)], bigger.head_sets[static_cast<std::size_t>(l)]) ||
                    !subset_of(s.neuron_sets[static_cast<std::size_t>(l)], bigger.neuron_sets[static_cast<std::size_t>(l)])) {
                    throw StructureError("nesting violated between consecutive submap entries");
                }
            }
        }
    }
}

const SubStructure& Submap::largest() const {
    if (entries.empty()) throw StructureError("submap has no entries");
    return entries.front();
}
const SubStructure& Submap::smallest() const {
    if (entries.empty()) throw StructureError("submap has no entries");
    return entries.back();
}
const SubStructure& Submap::at_level(int level_label) const {
    for (const auto& s : entries) {
        if (s.level_label == level_label) return s;
    }
    throw StructureError("unknown preserving level: " + std::to_string(level_label));
}
bool Submap::has_level(int level_label) const {
    for (const auto& s : entries) {
        if (s.level_label == level_label) return true;
    }
    return false;
}
std::vector<int> Submap::levels() const {
    std::vector<int> out;
    out.reserve(entries.size());
    for (const auto& s : entries) out.push_back(s.level_label);
    return out;
}

GateSet GateSet::ones(const ModelConfig& cfg, bool requires_grad) {
    GateSet g;
    for (int l = 0; l < cfg.n_layers; ++l) {
        g.head_gates.push_back(Tensor::full({cfg.n_heads}, 1.0, requires_grad));
        g.neuron_gates.push_back(Tensor::full({cfg.ffn_dim}, 1.0, requires_grad));
    }
    return g;
}

void GateSet::set_from_structure(const SubStructure& s, const ModelConfig& cfg) {
    for (int l = 0; l < cfg.n_layers; ++l) {
        auto& hg = head_gates[static_cast<std::size_t>(l)].data();
        std::fill(hg.begin(), hg.end(), 0.0);
        for (int h : s.head_sets[static_cast<std::size_t>(l)]) hg[static_cast<std::size_t>(h)] = 1.0;
        auto& ng = neuron_gates[static_cast<std::size_t>(l)].data();
        std::fill(ng.begin(), ng.end(), 0.0);
        for (int i : s.neuron_sets[static_cast<std::size_t>(l)]) ng[static_cast<std::size_t>(i)] = 1.0;
    }
}

void GateSet::set_all_ones() {
    for (auto& g : head_gates) std::fill(g.data().begin(), g.data().end(), 1.0);
    for (auto& g : neuron_gates) std::fill(g.data().begin(), g.data().end(), 1.0);
}

ElasticModel::ElasticModel(ModelConfig cfg, Submap submap, std::uint64_t init_seed)
    : cfg_(cfg), submap_(std::move(submap)) {
    cfg_.validate();
    submap_.validate(cfg_);
    // Storage is sized by the largest sub-structure; it must therefore span
    // every stored head and neuron.
    const auto& big = submap_.largest();
    for (int l = 0; l < cfg_.n_layers; ++l) {
        if (static_cast<int>(big.head_sets[static_cast<std::size_t>(l)].size()) != cfg_.n_heads ||
            static_cast<int>(big.neuron_sets[static_cast<std::size_t>(l)].size()) != cfg_.ffn_dim) {
            throw StructureError("largest sub-structure must retain every stored head and neuron");
        }
    }
    Rng rng(init_seed);
    const double ws = 0.05;
    const int d = cfg_.hidden_dim;
    token_embedding = Tensor::randn({cfg_.vocab_size, d}, rng, ws, true);
    position_embedding = Tensor::randn({cfg_.max_seq_len, d}, rng, ws, true);
    emb_ln_gain = Tensor::full({d}, 1.0, true);
    emb_ln_bias = Tensor::zeros({d}, true);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        LayerParams lp;
        for (int h = 0; h < cfg_.n_heads; ++h) {
            lp.wq.push_back(Tensor::randn({d, cfg_.head_dim}, rng, ws, true));
            lp.wk.push_back(Tensor::randn({d, cfg_.head_dim}, rng, ws, true));
            lp.wv.push_back(Tensor::randn({d, cfg_.head_dim}, rng, ws, true));
            lp.bq.push_back(Tensor::zeros({cfg_.head_dim}, true));
            lp.bk.push_back(Tensor::zeros({cfg_.head_dim}, true));
            lp.bv.push_back(Tensor::zeros({cfg_.head_dim}, true));
            lp.wo.push_back(Tensor::randn({cfg_.head_dim, d}, rng, ws, true));
        }
        lp.bo = Tensor::zeros({d}, true);
        lp.ln1_gain = Tensor::full({d}, 1.0, true);
        lp.ln1_bias = Tensor::zeros({d}, true);
        lp.ffn_w1 = Tensor::randn({d, cfg_.ffn_dim}, rng, ws, true);
        lp.ffn_b1 = Tensor::zeros({cfg_.ffn_dim}, true);
        lp.ffn_w2 = Tensor::randn({cfg_.ffn_dim, d}, rng, ws, true);
        lp.ffn_b2 = Tensor::zeros({d}, true);
        lp.ln2_gain = Tensor::full({d}, 1.0, true);
        lp.ln2_bias = Tensor::zeros({d}, true);
        layers.push_back(std::move(lp));
    }
    for (int r = 0; r < cfg_.relation_heads; ++r) {
        rel_wq.push_back(Tensor::randn({d, cfg_.relation_dim}, rng, ws, true));
        rel_wk.push_back(Tensor::randn({d, cfg_.relation_dim}, rng, ws, true));
        rel_wv.push_back(Tensor::randn({d, cfg_.relation_dim}, rng, ws, true));
    }
    mlm_w = Tensor::randn({d, cfg_.vocab_size}, rng, ws, true);
    mlm_b = Tensor::zeros({cfg_.vocab_size}, true);
    cls_w = Tensor::randn({d, cfg_.n_classes}, rng, ws, true);
    cls_b = Tensor::zeros({cfg_.n_classes}, true);
    rank_w = Tensor::randn({d}, rng, ws, true);
    scoring_gates_ = GateSet::ones(cfg_, false);
}

const SubStructure& ElasticModel::structure(int level_label) const {
    return submap_.at_level(level_label);
}

Tensor ElasticModel::attention_block(const Tensor& x, int layer, const SubStructure& s,
                                     const ForwardOptions& opt) const {
    const auto& lp = layers[static_cast<std::size_t>(layer)];
    const auto& head_set = s.head_sets[static_cast<std::size_t>(layer)];
    if (head_set.empty()) throw StructureError("empty head set");
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(cfg_.head_dim));

    auto head_output = [&](int h) {
        Tensor q = add_bias(matmul(x, lp.wq[static_cast<std::size_t>(h)]), lp.bq[static_cast<std::size_t>(h)]);
        Tensor k = add_bias(matmul(x, lp.wk[static_cast<std::size_t>(h)]), lp.bk[static_cast<std::size_t>(h)]);
        Tensor v = add_bias(matmul(x, lp.wv[static_cast<std::size_t>(h)]), lp.bv[static_cast<std::size_t>(h)]);
        Tensor attn = softmax(scale(matmul_nt(q, k), inv_sqrt_hd));
        return matmul(matmul(attn, v), lp.wo[static_cast<std::size_t>(h)]);
    };

    Tensor acc;
    if (opt.mode == ExecMode::kSliced) {
        for (int h : head_set) {
            Tensor o = head_output(h);
            acc = acc.defined() ? add(acc, o) : o;
        }
    } else {
        GateSet* gates = opt.gates;
        GateSet local;
        if (gates == nullptr) {
            local = GateSet::ones(cfg_, false);
            local.set_from_structure(s, cfg_);
            gates = &local;
        }
        const Tensor& hg = gates->head_gates[static_cast<std::size_t>(layer)];
        for (int h = 0; h < cfg_.n_heads; ++h) {
            Tensor o = head_output(h);
            if (opt.capture != nullptr) {
                opt.capture->head_outputs[static_cast<std::size_t>(layer)][static_cast<std::size_t>(h)] = o;
            }
            Tensor gated = gate_scale(o, hg, h);
            acc = acc.defined() ? add(acc, gated) : gated;
        }
    }
    return add_bias(acc, lp.bo);
}

Tensor ElasticModel::ffn_block(const Tensor& x, int layer, const SubStructure& s,
                               const ForwardOptions& opt) const {
    const auto& lp = layers[static_cast<std::size_t>(layer)];
    const auto& neuron_set = s.neuron_sets[static_cast<std::size_t>(layer)];
    if (neuron_set.empty()) throw StructureError("empty neuron set");
    if (opt.mode == ExecMode::kSliced) {
        std::span<const int> idx(neuron_set);
        Tensor h = gelu(add_bias_subset(matmul_col_subset(x, lp.ffn_w1, idx), lp.ffn_b1, idx));
        return add_bias(matmul_row_subset(h, lp.ffn_w2, idx), lp.ffn_b2);
    }
    GateSet* gates = opt.gates;
    GateSet local;
    if (gates == nullptr) {
        local = GateSet::ones(cfg_, false);
        local.set_from_structure(s, cfg_);
        gates = &local;
    }
    Tensor h = gelu(add_bias(matmul(x, lp.ffn_w1), lp.ffn_b1));
    Tensor gated = col_scale(h, gates->neuron_gates[static_cast<std::size_t>(layer)]);
    return add_bias(matmul(gated, lp.ffn_w2), lp.ffn_b2);
}

ForwardResult ElasticModel::forward(std::span<const int> tokens, const SubStructure& s,
                                    const ForwardOptions& opt) const {
    const int n = static_cast<int>(tokens.size());
    if (n < 1 || n > cfg_.max_seq_len) throw ContractError("sequence length out of range");
    for (int t : tokens) {
        if (t < 0 || t >= cfg_.vocab_size) throw DomainError("token id out of range");
    }
    s.validate(cfg_.n_layers, cfg_.n_heads, cfg_.ffn_dim);
    if (opt.capture != nullptr) {
        opt.capture->head_outputs.assign(static_cast<std::size_t>(cfg_.n_layers),
                                         std::vector<Tensor>(static_cast<std::size_t>(cfg_.n_heads)));
    }

    std::vector<int> pos(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
    Tensor x = add(embed_rows(token_embedding, tokens), embed_rows(position_embedding, pos));
    x = layer_norm(x, emb_ln_gain, emb_ln_bias);

    ForwardResult res;
    for (int l = 0; l < cfg_.n_layers; ++l) {
        if (opt.capture_last_attn_input && l == cfg_.n_layers - 1) res.last_attn_input = x;
        Tensor a = attention_block(x, l, s, opt);
        const auto& lp = layers[static_cast<std::size_t>(l)];
        x = layer_norm(add(x, a), lp.ln1_gain, lp.ln1_bias);
        Tensor f = ffn_block(x, l, s, opt);
        x = layer_norm(add(x, f), lp.ln2_gain, lp.ln2_bias);
    }
    res.hiddens = x;
    if (opt.want_mlm) res.mlm_logits = add_bias(matmul(x, mlm_w), mlm_b);
    if (opt.want_cls_vector || opt.want_cls_logits) {
        Tensor cls = take_row(x, 0);
        if (opt.want_cls_vector) res.cls_vector = cls;
        if (opt.want_cls_logits) res.cls_logits = add_bias(matmul(cls, cls_w), cls_b);
    }
    return res;
}

namespace {

RelationTriple relations_from_projections(const Tensor& x, const std::vector<Tensor>& wq,
                                          const std::vector<Tensor>& wk, const std::vector<Tensor>& wv,
                                          double scale_dim) {
    RelationTriple out;
    auto reln = [&](const Tensor& w) {
        Tensor y = matmul(x, w);
        return softmax(scale(matmul_nt(y, y), 1.0 / scale_dim));
    };
    for (std::size_t r = 0; r < wq.size(); ++r) {
        out.query.push_back(reln(wq[r]));
        out.key.push_back(reln(wk[r]));
        out.value.push_back(reln(wv[r]));
    }
    return out;
}

}  // namespace

RelationTriple ElasticModel::relations_from_block(const Tensor& hiddens) const {
    if (hiddens.rank() != 2 || hiddens.cols() != cfg_.hidden_dim) {
        throw DimError("relations_from_block: hiddens must be n x hidden_dim");
    }
    return relations_from_projections(hiddens, rel_wq, rel_wk, rel_wv,
                                      static_cast<double>(cfg_.relation_dim));
}

RelationTriple ElasticModel::relations_from_last_attention(const Tensor& x) const {
    const int merged = cfg_.n_heads * cfg_.head_dim;
    if (merged % cfg_.relation_heads != 0) {
        throw ConfigError("relation_heads must divide the merged attention dimension");
    }
    const int slice = merged / cfg_.relation_heads;
    const auto& lp = layers.back();
    // Merge per-head projections into d x merged, then re-split into
    // relation_heads slices of width `slice`.
    auto merge = [&](const std::vector<Tensor>& per_head) {
        Tensor m = Tensor::zeros({cfg_.hidden_dim, merged});
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const Tensor& w = per_head[static_cast<std::size_t>(h)];
            for (int i = 0; i < cfg_.hidden_dim; ++i)
                for (int j = 0; j < cfg_.head_dim; ++j)
                    m.at(i, h * cfg_.head_dim + j) = w.at(i, j);
        }
        return m;
    };
    auto split = [&](const Tensor& m) {
        std::vector<Tensor> out;
        for (int r = 0; r < cfg_.relation_heads; ++r) {
            Tensor w = Tensor::zeros({cfg_.hidden_dim, slice});
            for (int i = 0; i < cfg_.hidden_dim; ++i)
                for (int j = 0; j < slice; ++j) w.at(i, j) = m.at(i, r * slice + j);
            out.push_back(w);
        }
        return out;
    };
    NoGradScope ng;  // teacher-side relations are never differentiated
    auto wq = split(merge(lp.wq));
    auto wk = split(merge(lp.wk));
    auto wv = split(merge(lp.wv));
    return relations_from_projections(x, wq, wk, wv, static_cast<double>(slice));
}

RelationTriple ElasticModel::teacher_relations(std::span<const int> tokens, const SubStructure& s) const {
    NoGradScope ng;
    ForwardOptions opt;
    opt.capture_last_attn_input = true;
    ForwardResult r = forward(tokens, s, opt);
    return relations_from_last_attention(r.last_attn_input);
}

std::int64_t ElasticModel::flops(const ModelConfig& cfg, const SubStructure& s, int seq_len) {
    const std::int64_t n = seq_len;
    const std::int64_t d = cfg.hidden_dim;
    const std::int64_t hd = cfg.head_dim;
    std::int64_t total = 0;
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::int64_t heads = static_cast<std::int64_t>(s.head_sets[static_cast<std::size_t>(l)].size());
        const std::int64_t neurons = static_cast<std::int64_t>(s.neuron_sets[static_cast<std::size_t>(l)].size());
        // per head: q/k/v projections, attention scores, weighted values, output projection
        total += heads * (3 * n * d * hd + n * n * hd + n * n * hd + n * hd * d);
        // ffn: selected columns in, selected rows out
        total += n * d * neurons + n * neurons * d;
    }
    return total;
}

std::vector<std::pair<std::string, Tensor>> ElasticModel::named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("token_embedding", token_embedding);
    out.emplace_back("position_embedding", position_embedding);
    out.emplace_back("emb_ln_gain", emb_ln_gain);
    out.emplace_back("emb_ln_bias", emb_ln_bias);
    for (int l = 0; l < cfg_.n_layers; ++l) {
        auto& lp = layers[static_cast<std::size_t>(l)];
        const std::string p = "layer" + std::to_string(l) + ".";
        for (int h = 0; h < cfg_.n_heads; ++h) {
            const std::string hp = p + "head" + std::to_string(h) + ".";
            out.emplace_back(hp + "wq", lp.wq[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "wk", lp.wk[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "wv", lp.wv[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "bq", lp.bq[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "bk", lp.bk[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "bv", lp.bv[static_cast<std::size_t>(h)]);
            out.emplace_back(hp + "wo", lp.wo[static_cast<std::size_t>(h)]);
        }
        out.emplace_back(p + "bo", lp.bo);
        out.emplace_back(p + "ln1_gain", lp.ln1_gain);
        out.emplace_back(p + "ln1_bias", lp.ln1_bias);
        out.emplace_back(p + "ffn_w1", lp.ffn_w1);
        out.emplace_back(p + "ffn_b1", lp.ffn_b1);
        out.emplace_back(p + "ffn_w2", lp.ffn_w2);
        out.emplace_back(p + "ffn_b2", lp.ffn_b2);
        out.emplace_back(p + "ln2_gain", lp.ln2_gain);
        out.emplace_back(p + "ln2_bias", lp.ln2_bias);
    }
    for (int r = 0; r < cfg_.relation_heads; ++r) {
        const std::string rp = "rel" + std::to_string(r) + ".";
        out.emplace_back(rp + "wq", rel_wq[static_cast<std::size_t>(r)]);
        out.emplace_back(rp + "wk", rel_wk[static_cast<std::size_t>(r)]);
        out.emplace_back(rp + "wv", rel_wv[static_cast<std::size_t>(r)]);
    }
    out.emplace_back("mlm_w", mlm_w);
    out.emplace_back("mlm_b", mlm_b);
    out.emplace_back("cls_w", cls_w);
    out.emplace_back("cls_b", cls_b);
    out.emplace_back("rank_w", rank_w);
    return out;
}

std::vector<std::pair<std::string, Tensor>> ElasticModel::named_parameters() const {
    return const_cast<ElasticModel*>(this)->named_parameters();
}

std::size_t ElasticModel::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : named_parameters()) n += t.numel();
    return n;
}

void ElasticModel::set_requires_grad(bool rg) {
    for (auto& [name, t] : named_parameters()) t.set_requires_grad(rg);
}

void ElasticModel::zero_grads() {
    for (auto& [name, t] : named_parameters()) t.zero_grad();
}

ElasticModel build_student(const ElasticModel& teacher, const Submap& teacher_space_submap) {
    const ModelConfig& tc = teacher.config();
    teacher_space_submap.validate(tc);
    const SubStructure& big = teacher_space_submap.largest();
    const int heads = static_cast<int>(big.head_sets[0].size());
    const int neurons = static_cast<int>(big.neuron_sets[0].size());
    for (int l = 1; l < tc.n_layers; ++l) {
        if (static_cast<int>(big.head_sets[static_cast<std::size_t>(l)].size()) != heads ||
            static_cast<int>(big.neuron_sets[static_cast<std::size_t>(l)].size()) != neurons) {
            throw StructureError("student assembly requires uniform per-layer retention counts");
        }
    }
    ModelConfig sc = tc;
    sc.n_heads = heads;
    sc.hidden_dim = tc.hidden_dim;  // embeddings and residual width are not pruned
    sc.head_dim = tc.head_dim;
    sc.ffn_dim = neurons;
    if ((sc.n_heads * sc.head_dim) % sc.relation_heads != 0) {
        throw ConfigError("student head layout incompatible with relation head count");
    }

    // Reindex each level's sets by position within the largest level's sets.
    Submap compact;
    for (const auto& entry : teacher_space_submap.entries) {
        SubStructure s;
        s.level_label = entry.level_label;
        s.head_sets.resize(static_cast<std::size_t>(tc.n_layers));
        s.neuron_sets.resize(static_cast<std::size_t>(tc.n_layers));
        for (int l = 0; l < tc.n_layers; ++l) {
            const auto& big_h = big.head_sets[static_cast<std::size_t>(l)];
            for (int h : entry.head_sets[static_cast<std::size_t>(l)]) {
                auto it = std::lower_bound(big_h.begin(), big_h.end(), h);
                if (it == big_h.end() || *it != h) throw StructureError("submap nesting broken during reindex");
                s.head_sets[static_cast<std::size_t>(l)].push_back(static_cast<int>(it - big_h.begin()));
            }
            const auto& big_n = big.neuron_sets[static_cast<std::size_t>(l)];
            for (int i : entry.neuron_sets[static_cast<std::size_t>(l)]) {
                auto it = std::lower_bound(big_n.begin(), big_n.end(), i);
                if (it == big_n.end() || *it != i) throw StructureError("submap nesting broken during reindex");
                s.neuron_sets[static_cast<std::size_t>(l)].push_back(static_cast<int>(it - big_n.begin()));
            }
        }
        compact.entries.push_back(std::move(s));
    }

    ElasticModel student(sc, compact, 0x57d3u);
    // Initialize from the teacher's retained parameters.
    auto copy = [](const Tensor& src, Tensor& dst) { dst.data() = src.data(); };
    copy(teacher.token_embedding, student.token_embedding);
    copy(teacher.position_embedding, student.position_embedding);
    copy(teacher.emb_ln_gain, student.emb_ln_gain);
    copy(teacher.emb_ln_bias, student.emb_ln_bias);
    for (int l = 0; l < tc.n_layers; ++l) {
        const auto& tl = teacher.layers[static_cast<std::size_t>(l)];
        auto& sl = student.layers[static_cast<std::size_t>(l)];
        const auto& head_map = big.head_sets[static_cast<std::size_t>(l)];
        for (int h = 0; h < heads; ++h) {
            const int th = head_map[static_cast<std::size_t>(h)];
            copy(tl.wq[static_cast<std::size_t>(th)], sl.wq[static_cast<std::size_t>(h)]);
            copy(tl.wk[static_cast<std::size_t>(th)], sl.wk[static_cast<std::size_t>(h)]);
            copy(tl.wv[static_cast<std::size_t>(th)], sl.wv[static_cast<std::size_t>(h)]);
            copy(tl.bq[static_cast<std::size_t>(th)], sl.bq[static_cast<std::size_t>(h)]);
            copy(tl.bk[static_cast<std::size_t>(th)], sl.bk[static_cast<std::size_t>(h)]);
            copy(tl.bv[static_cast<std::size_t>(th)], sl.bv[static_cast<std::size_t>(h)]);
            copy(tl.wo[static_cast<std::size_t>(th)], sl.wo[static_cast<std::size_t>(h)]);
        }
        copy(tl.bo, sl.bo);
        copy(tl.ln1_gain, sl.ln1_gain);
        copy(tl.ln1_bias, sl.ln1_bias);
        const auto& neuron_map = big.neuron_sets[static_cast<std::size_t>(l)];
        for (int i = 0; i < neurons; ++i) {
            const int ti = neuron_map[static_cast<std::size_t>(i)];
            for (int r = 0; r < tc.hidden_dim; ++r) sl.ffn_w1.at(r, i) = tl.ffn_w1.at(r, ti);
            sl.ffn_b1.data()[static_cast<std::size_t>(i)] = tl.ffn_b1.data()[static_cast<std::size_t>(ti)];
            for (int cidx = 0; cidx < tc.hidden_dim; ++cidx) sl.ffn_w2.at(i, cidx) = tl.ffn_w2.at(ti, cidx);
        }
        copy(tl.ffn_b2, sl.ffn_b2);
        copy(tl.ln2_gain, sl.ln2_gain);
        copy(tl.ln2_bias, sl.ln2_bias);
    }
    copy(teacher.mlm_w, student.mlm_w);
    copy(teacher.mlm_b, student.mlm_b);
    copy(teacher.cls_w, student.cls_w);
    copy(teacher.cls_b, student.cls_b);
    copy(teacher.rank_w, student.rank_w);
    // The relation block stays at its fresh initialization: it replaces the
    // teacher's last attention block as the relation source and is trained
    // from scratch during distillation.
    return student;
}

}  // namespace elm
