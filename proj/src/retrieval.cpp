#include "elm/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elm/errors.hpp"

namespace elm {

namespace {

std::vector<double> cls_vector(const ElasticModel& model, std::span<const int> tokens,
                               const SubStructure& s) {
    NoGradScope ng;
    ForwardOptions opt;
    opt.want_cls_vector = true;
    ForwardResult r = model.forward(tokens, s, opt);
    return r.cls_vector.data();
}

}  // namespace

std::vector<double> encode_query(const ElasticModel& model, const std::string& query, int level_label,
                                 int max_len) {
    return cls_vector(model, tokenize(query, max_len), model.structure(level_label));
}

std::vector<double> encode_passage(const ElasticModel& model, const std::string& passage, int max_len) {
    return cls_vector(model, tokenize(passage, max_len), model.submap().largest());
}

PassageIndex build_index(const ElasticModel& model, const std::vector<std::string>& passages,
                         int max_len) {
    PassageIndex index;
    index.dim = model.config().hidden_dim;
    index.ids.reserve(passages.size());
    index.vectors.reserve(passages.size());
    for (std::size_t i = 0; i < passages.size(); ++i) {
        index.ids.push_back(static_cast<int>(i));
        index.vectors.push_back(encode_passage(model, passages[i], max_len));
    }
    return index;
}

double sim_dense(std::span<const double> q, std::span<const double> p) {
    if (q.size() != p.size()) throw DimError("sim_dense: dimension mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) acc += q[i] * p[i];
    return acc;
}

Tensor inbatch_nll(const std::vector<RetrievalExample>& batch, const ElasticModel& model,
                   const std::vector<std::string>& passages, int level_label, int passage_len) {
    if (batch.empty()) throw ContractError("inbatch_nll: empty batch");
    const SubStructure& qs = model.structure(level_label);
    const SubStructure& ps = model.submap().largest();
    ForwardOptions opt;
    opt.want_cls_vector = true;

    // Candidate pool: every positive and hard negative the batch mentions.
    std::vector<int> pool;
    for (const auto& ex : batch) {
        if (ex.positive_id < 0 || ex.positive_id >= static_cast<int>(passages.size())) {
            throw ContractError("inbatch_nll: bad positive id");
        }
        for (int nid : ex.negative_ids) {
            if (nid == ex.positive_id) throw ContractError("inbatch_nll: positive repeated as negative");
        }
        pool.push_back(ex.positive_id);
        pool.insert(pool.end(), ex.negative_ids.begin(), ex.negative_ids.end());
    }
    std::sort(pool.begin(), pool.end());
    pool.erase(std::unique(pool.begin(), pool.end()), pool.end());

    std::vector<Tensor> passage_vecs(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
        ForwardResult r = model.forward(tokenize(passages[static_cast<std::size_t>(pool[i])], passage_len), ps, opt);
        passage_vecs[i] = r.cls_vector;
    }

    Tensor loss;
    for (const auto& ex : batch) {
        if (ex.query_tokens.empty()) throw ContractError("inbatch_nll: example without query tokens");
        ForwardResult qr = model.forward(ex.query_tokens, qs, opt);
        std::vector<Tensor> per_candidate;
        per_candidate.reserve(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            per_candidate.push_back(dot(qr.cls_vector, passage_vecs[i]));
        }
        Tensor logits = pack_scalars(per_candidate);
        const int target = static_cast<int>(std::lower_bound(pool.begin(), pool.end(), ex.positive_id) - pool.begin());
        std::vector<int> tgt{target};
        Tensor l = cross_entropy(logits, tgt);
        loss = loss.defined() ? add(loss, l) : l;
    }
    return scale(loss, 1.0 / static_cast<double>(batch.size()));
}

std::vector<int> concat_pair_tokens(const std::string& query, const std::string& passage, int max_len,
                                    bool* truncated) {
    std::vector<int> ids;
    ids.push_back(tok::kCls);
    bool trunc = false;
    for (unsigned char c : query) {
        if (static_cast<int>(ids.size()) >= max_len - 1) {
            trunc = true;
            break;
        }
        ids.push_back(static_cast<int>(c));
    }
    if (static_cast<int>(ids.size()) < max_len) ids.push_back(tok::kSep);
    for (unsigned char c : passage) {
        if (static_cast<int>(ids.size()) >= max_len - 1) {
            trunc = true;
            break;
        }
        ids.push_back(static_cast<int>(c));
    }
    if (static_cast<int>(ids.size()) < max_len) {
        ids.push_back(tok::kSep);
    } else {
        trunc = true;
    }
    if (truncated) *truncated = trunc;
    return ids;
}

Tensor sim_rerank_tensor(const ElasticModel& model, std::span<const int> pair_tokens, int level_label) {
    ForwardOptions opt;
    opt.want_cls_vector = true;
    ForwardResult r = model.forward(pair_tokens, model.structure(level_label), opt);
    return dot(r.cls_vector, model.rank_w);
}

double sim_rerank(const ElasticModel& model, const std::string& query, const std::string& passage,
                  int level_label, bool* truncated) {
    NoGradScope ng;
    auto toks = concat_pair_tokens(query, passage, model.config().max_seq_len, truncated);
    return sim_rerank_tensor(model, toks, level_label).item();
}

std::vector<int> mine_localized_negatives(const RankedList& run, int k_top, int m_minus_1,
                                          std::uint64_t seed, bool* short_supply) {
    if (k_top < 1 || m_minus_1 < 1) throw ContractError("mine_localized_negatives: counts must be >= 1");
    std::vector<int> candidates;
    for (int id : run.ranked_ids) {
        if (id == run.positive_id) continue;
        candidates.push_back(id);
        if (static_cast<int>(candidates.size()) == k_top) break;
    }
    if (short_supply) *short_supply = static_cast<int>(candidates.size()) < m_minus_1;
    if (static_cast<int>(candidates.size()) <= m_minus_1) return candidates;
    Rng rng(seed);
    auto picks = rng.sample_without_replacement(static_cast<int>(candidates.size()), m_minus_1);
    std::vector<int> out;
    out.reserve(picks.size());
    for (int i : picks) out.push_back(candidates[static_cast<std::size_t>(i)]);
    return out;
}

std::vector<int> mine_hard_negatives_lexical(const std::string& query, int positive_id,
                                             const std::vector<std::string>& passages, int count) {
    // Overlap = number of distinct query byte 4-grams appearing in the passage.
    auto grams = [](const std::string& s) {
        std::vector<std::string> g;
        for (std::size_t i = 0; i + 4 <= s.size(); ++i) g.push_back(s.substr(i, 4));
        std::sort(g.begin(), g.end());
        g.erase(std::unique(g.begin(), g.end()), g.end());
        return g;
    };
    const auto qg = grams(query);
    std::vector<std::pair<int, int>> scored;  // (-overlap, id) for stable sort
    for (std::size_t i = 0; i < passages.size(); ++i) {
        if (static_cast<int>(i) == positive_id) continue;
        int overlap = 0;
        for (const auto& g : qg) {
            if (passages[i].find(g) != std::string::npos) ++overlap;
        }
        scored.emplace_back(-overlap, static_cast<int>(i));
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    for (int i = 0; i < count && i < static_cast<int>(scored.size()); ++i) out.push_back(scored[static_cast<std::size_t>(i)].second);
    return out;
}

std::vector<int> rank_passages(const PassageIndex& index, std::span<const double> query_vec) {
    std::vector<std::pair<double, int>> scored;
    scored.reserve(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        scored.emplace_back(-sim_dense(query_vec, index.vectors[i]), index.ids[i]);
    }
    std::sort(scored.begin(), scored.end());
    std::vector<int> out;
    out.reserve(scored.size());
    for (const auto& [negscore, id] : scored) out.push_back(id);
    return out;
}

std::map<int, RetrievalMetrics> evaluate_retrieval(const ElasticModel& model, const PassageIndex& index,
                                                   const std::vector<std::string>& queries,
                                                   const std::vector<int>& positive_ids,
                                                   const std::vector<int>& levels,
                                                   const std::vector<int>& k_list, int query_len) {
    if (queries.size() != positive_ids.size()) throw ContractError("evaluate_retrieval: query/positive mismatch");
    std::map<int, RetrievalMetrics> out;
    for (int level : levels) {
        RetrievalMetrics m;
        for (int k : k_list) {
            m.recall_at[k] = 0.0;
            m.mrr_at[k] = 0.0;
        }
        for (std::size_t qi = 0; qi < queries.size(); ++qi) {
            auto vec = encode_query(model, queries[qi], level, query_len);
            auto ranking = rank_passages(index, vec);
            int rank = -1;
            for (std::size_t r = 0; r < ranking.size(); ++r) {
                if (ranking[r] == positive_ids[qi]) {
                    rank = static_cast<int>(r) + 1;
                    break;
                }
            }
            for (int k : k_list) {
                if (rank > 0 && rank <= k) {
                    m.recall_at[k] += 1.0;
                    m.mrr_at[k] += 1.0 / rank;
                }
            }
        }
        for (int k : k_list) {
            m.recall_at[k] /= static_cast<double>(queries.size());
            m.mrr_at[k] /= static_cast<double>(queries.size());
        }
        out[level] = m;
    }
    return out;
}

TaskLoss dense_retrieval_objective(const std::vector<RetrievalExample>& examples,
                                   const std::vector<std::string>& passages, int passage_len) {
    return [&examples, &passages, passage_len](const ElasticModel& model, const SubStructure& s,
                                                std::span<const int> idx) {
        std::vector<RetrievalExample> batch;
        batch.reserve(idx.size());
        for (int i : idx) batch.push_back(examples[static_cast<std::size_t>(i)]);
        return inbatch_nll(batch, model, passages, s.level_label, passage_len);
    };
}

TaskLoss rerank_objective(const std::vector<RetrievalExample>& examples,
                          const std::vector<std::string>& queries,
                          const std::vector<std::string>& passages, int pair_len) {
    return [&examples, &queries, &passages, pair_len](const ElasticModel& model, const SubStructure& s,
                                                      std::span<const int> idx) {
        Tensor loss;
        for (int i : idx) {
            const auto& ex = examples[static_cast<std::size_t>(i)];
            const std::string& q = queries[static_cast<std::size_t>(i)];
            std::vector<int> cand_ids{ex.positive_id};
            cand_ids.insert(cand_ids.end(), ex.negative_ids.begin(), ex.negative_ids.end());
            std::vector<Tensor> scores;
            scores.reserve(cand_ids.size());
            for (int cid : cand_ids) {
                auto toks = concat_pair_tokens(q, passages[static_cast<std::size_t>(cid)], pair_len);
                scores.push_back(sim_rerank_tensor(model, toks, s.level_label));
            }
            Tensor logits = pack_scalars(scores);
            std::vector<int> tgt{0};
            Tensor l = cross_entropy(logits, tgt);
            loss = loss.defined() ? add(loss, l) : l;
        }
        return scale(loss, 1.0 / static_cast<double>(idx.size()));
    };
}

TaskLoss classification_objective(const ClassificationData& data, int seq_len) {
    return [&data, seq_len](const ElasticModel& model, const SubStructure& s, std::span<const int> idx) {
        ForwardOptions opt;
        opt.want_cls_logits = true;
        Tensor loss;
        for (int i : idx) {
            ForwardResult r = model.forward(tokenize(data.texts[static_cast<std::size_t>(i)], seq_len), s, opt);
            std::vector<int> tgt{data.labels[static_cast<std::size_t>(i)]};
            Tensor l = cross_entropy(r.cls_logits, tgt);
            loss = loss.defined() ? add(loss, l) : l;
        }
        return scale(loss, 1.0 / static_cast<double>(idx.size()));
    };
}

}  // namespace elm
