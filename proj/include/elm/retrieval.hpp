#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "elm/corpus.hpp"
#include "elm/distill.hpp"
#include "elm/model.hpp"

namespace elm {

// One training example: query, its positive passage, and m-1 negatives
// (hard negatives here; in-batch negatives come from the other examples).
struct RetrievalExample {
    std::vector<int> query_tokens;
    int positive_id = -1;
    std::vector<int> negative_ids;
};

// Passage id -> [CLS] embedding, every entry encoded with the largest
// structure. One embedding per passage, whatever the query side does.
struct PassageIndex {
    int dim = 0;
    std::vector<int> ids;
    std::vector<std::vector<double>> vectors;

    std::size_t size() const { return ids.size(); }
};

// [CLS] vector of the query under the selected preserving level.
std::vector<double> encode_query(const ElasticModel& model, const std::string& query, int level_label,
                                 int max_len);

// [CLS] vector of a passage; always the largest structure.
std::vector<double> encode_passage(const ElasticModel& model, const std::string& passage, int max_len);

PassageIndex build_index(const ElasticModel& model, const std::vector<std::string>& passages,
                         int max_len);

// Plain dot product, no normalization.
double sim_dense(std::span<const double> q, std::span<const double> p);

// In-batch negative log likelihood at one preserving level: the positive is
// scored against every passage the batch brought along (its own positive,
// its hard negatives, and everyone else's). Queries use `level_label`;
// passages always use the largest structure.
Tensor inbatch_nll(const std::vector<RetrievalExample>& batch, const ElasticModel& model,
                   const std::vector<std::string>& passages, int level_label, int passage_len);

// Cross-encoder score: rank_w . [CLS] of "[CLS] query [SEP] passage [SEP]"
// under the selected level. Overlong inputs are truncated; `truncated`
// reports it when non-null.
double sim_rerank(const ElasticModel& model, const std::string& query, const std::string& passage,
                  int level_label, bool* truncated = nullptr);
// Differentiable variant used by the rerank objective.
Tensor sim_rerank_tensor(const ElasticModel& model, std::span<const int> pair_tokens, int level_label);

std::vector<int> concat_pair_tokens(const std::string& query, const std::string& passage, int max_len,
                                    bool* truncated = nullptr);

// Localized negatives: sample m-1 ids uniformly without replacement from the
// top-k ranked non-positive passages of a retriever run.
struct RankedList {
    std::vector<int> ranked_ids;  // best first, positives may appear
    int positive_id = -1;
};
std::vector<int> mine_localized_negatives(const RankedList& run, int k_top, int m_minus_1,
                                          std::uint64_t seed, bool* short_supply = nullptr);

// Lexical-overlap stand-in for a first-stage retriever: negatives are the
// non-positive passages sharing the most query tokens.
std::vector<int> mine_hard_negatives_lexical(const std::string& query, int positive_id,
                                             const std::vector<std::string>& passages, int count);

struct RetrievalMetrics {
    std::map<int, double> recall_at;  // k -> recall
    std::map<int, double> mrr_at;     // k -> MRR
};

// Exhaustive dot-product ranking of the index for each query; ground truth
// is positive_ids[i] for queries[i].
std::map<int, RetrievalMetrics> evaluate_retrieval(const ElasticModel& model, const PassageIndex& index,
                                                   const std::vector<std::string>& queries,
                                                   const std::vector<int>& positive_ids,
                                                   const std::vector<int>& levels,
                                                   const std::vector<int>& k_list, int query_len);

// Full ranking of the index for one query vector (ties by lower id).
std::vector<int> rank_passages(const PassageIndex& index, std::span<const double> query_vec);

// Finetuning objectives packaged for distill::finetune.
TaskLoss dense_retrieval_objective(const std::vector<RetrievalExample>& examples,
                                   const std::vector<std::string>& passages, int passage_len);
TaskLoss rerank_objective(const std::vector<RetrievalExample>& examples,
                          const std::vector<std::string>& queries,
                          const std::vector<std::string>& passages, int pair_len);
TaskLoss classification_objective(const ClassificationData& data, int seq_len);

}  // namespace elm
