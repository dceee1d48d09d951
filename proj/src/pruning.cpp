#include "elm/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "elm/errors.hpp"

namespace elm {

ImportanceScores record_scores(ElasticModel& model, const std::vector<std::vector<MlmExample>>& batches) {
    if (batches.empty()) throw ContractError("record_scores: at least one batch required");
    const ModelConfig& cfg = model.config();
    ImportanceScores scores;
    scores.head_scores.assign(static_cast<std::size_t>(cfg.n_layers),
                              std::vector<double>(static_cast<std::size_t>(cfg.n_heads), 0.0));
    scores.neuron_scores.assign(static_cast<std::size_t>(cfg.n_layers),
                                std::vector<double>(static_cast<std::size_t>(cfg.ffn_dim), 0.0));

    GateSet& gates = model.scoring_gates();
    gates.set_all_ones();
    for (auto& g : gates.head_gates) g.set_requires_grad(true);
    for (auto& g : gates.neuron_gates) g.set_requires_grad(true);
    // Only the gates carry gradients; parameters stay frozen and untouched.
    model.set_requires_grad(false);

    const SubStructure full = SubStructure::full(100, cfg);
    ForwardOptions opt;
    opt.mode = ExecMode::kMasked;
    opt.gates = &gates;
    opt.want_mlm = true;

    for (const auto& batch : batches) {
        if (batch.empty()) throw ContractError("record_scores: empty batch");
        for (auto& g : gates.head_gates) g.zero_grad();
        for (auto& g : gates.neuron_gates) g.zero_grad();
        Tape tape;
        TapeScope scope(tape);
        Tensor loss;
        for (const auto& ex : batch) {
            ForwardResult r = model.forward(ex.tokens, full, opt);
            Tensor l = cross_entropy(r.mlm_logits, ex.targets);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0 / static_cast<double>(batch.size()));
        tape.backward(loss);
        for (int l = 0; l < cfg.n_layers; ++l) {
            const auto& hg = gates.head_gates[static_cast<std::size_t>(l)].grad();
            for (int h = 0; h < cfg.n_heads; ++h)
                scores.head_scores[static_cast<std::size_t>(l)][static_cast<std::size_t>(h)] += std::abs(hg[static_cast<std::size_t>(h)]);
            const auto& ng = gates.neuron_gates[static_cast<std::size_t>(l)].grad();
            for (int i = 0; i < cfg.ffn_dim; ++i)
                scores.neuron_scores[static_cast<std::size_t>(l)][static_cast<std::size_t>(i)] += std::abs(ng[static_cast<std::size_t>(i)]);
        }
        scores.sample_count += 1;
    }
    for (auto& v : scores.head_scores)
        for (double& x : v) x /= scores.sample_count;
    for (auto& v : scores.neuron_scores)
        for (double& x : v) x /= scores.sample_count;

    for (auto& g : gates.head_gates) g.set_requires_grad(false);
    for (auto& g : gates.neuron_gates) g.set_requires_grad(false);
    model.set_requires_grad(true);
    return scores;
}

namespace {

void l2_normalize_group(std::vector<double>& v, int layer, const char* kind,
                        std::vector<std::string>& warnings) {
    double norm2 = 0.0;
    for (double x : v) norm2 += x * x;
    if (norm2 == 0.0) {
        std::ostringstream os;
        os << "all-zero " << kind << " scores in layer " << layer << "; left as zeros";
        warnings.push_back(os.str());
        return;
    }
    const double inv = 1.0 / std::sqrt(norm2);
    for (double& x : v) x *= inv;
}

}  // namespace

ImportanceScores normalize_scores(const ImportanceScores& scores) {
    ImportanceScores out = scores;
    for (std::size_t l = 0; l < out.head_scores.size(); ++l) {
        l2_normalize_group(out.head_scores[l], static_cast<int>(l), "head", out.warnings);
        l2_normalize_group(out.neuron_scores[l], static_cast<int>(l), "neuron", out.warnings);
    }
    return out;
}

namespace {

// Indices ranked by descending score; equal scores rank the lower index first.
std::vector<int> ranked_indices(const std::vector<double>& scores) {
    std::vector<int> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
        if (scores[static_cast<std::size_t>(a)] != scores[static_cast<std::size_t>(b)])
            return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
        return a < b;
    });
    return idx;
}

std::vector<int> top_k_sorted(const std::vector<int>& ranking, int k) {
    std::vector<int> out(ranking.begin(), ranking.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

Submap derive_submap(const ImportanceScores& scores, const std::vector<int>& levels,
                     std::vector<std::string>* clamp_report) {
    if (levels.empty()) throw ContractError("derive_submap: no levels given");
    int prev = 101;
    for (int p : levels) {
        if (p <= 0 || p > 100) throw ContractError("derive_submap: levels must be in (0,100]");
        if (p >= prev) throw ContractError("derive_submap: levels must be strictly decreasing");
        prev = p;
    }
    const int n_layers = static_cast<int>(scores.head_scores.size());
    Submap submap;
    for (int p : levels) {
        SubStructure s;
        s.level_label = p;
        s.head_sets.resize(static_cast<std::size_t>(n_layers));
        s.neuron_sets.resize(static_cast<std::size_t>(n_layers));
        for (int l = 0; l < n_layers; ++l) {
            const auto& hs = scores.head_scores[static_cast<std::size_t>(l)];
            const auto& ns = scores.neuron_scores[static_cast<std::size_t>(l)];
            const int n_heads = static_cast<int>(hs.size());
            const int n_neurons = static_cast<int>(ns.size());
            int kh = static_cast<int>(std::ceil(p / 100.0 * n_heads));
            int kn = static_cast<int>(std::ceil(p / 100.0 * n_neurons));
            if (kh < 1) {
                kh = 1;
                if (clamp_report) {
                    clamp_report->push_back("level " + std::to_string(p) + " layer " + std::to_string(l) +
                                            ": head count clamped to 1");
                }
            }
            if (kn < 1) {
                kn = 1;
                if (clamp_report) {
                    clamp_report->push_back("level " + std::to_string(p) + " layer " + std::to_string(l) +
                                            ": neuron count clamped to 1");
                }
            }
            s.head_sets[static_cast<std::size_t>(l)] = top_k_sorted(ranked_indices(hs), kh);
            s.neuron_sets[static_cast<std::size_t>(l)] = top_k_sorted(ranked_indices(ns), kn);
        }
        submap.entries.push_back(std::move(s));
    }
    return submap;
}

std::string scores_sidecar_text(const ImportanceScores& scores) {
    std::ostringstream os;
    os.precision(6);
    for (std::size_t l = 0; l < scores.head_scores.size(); ++l) {
        os << "layer " << l << " heads:";
        for (int i : ranked_indices(scores.head_scores[l])) {
            os << ' ' << i << ':' << scores.head_scores[l][static_cast<std::size_t>(i)];
        }
        os << '\n';
        const auto& ns = scores.neuron_scores[l];
        auto ranking = ranked_indices(ns);
        os << "layer " << l << " neurons (top 16):";
        for (std::size_t r = 0; r < ranking.size() && r < 16; ++r) {
            os << ' ' << ranking[r] << ':' << ns[static_cast<std::size_t>(ranking[r])];
        }
        os << '\n';
    }
    if (!scores.warnings.empty()) {
        for (const auto& w : scores.warnings) os << "warning: " << w << '\n';
    }
    return os.str();
}

}  // namespace elm
