#pragma once

#include <string>
#include <vector>

#include "elm/corpus.hpp"
#include "elm/model.hpp"

namespace elm {

// Per-gate accumulated absolute loss gradients: how much each attention head
// and FFN neuron contributes to the masked-LM loss, to first order.
struct ImportanceScores {
    std::vector<std::vector<double>> head_scores;    // [layer][head]
    std::vector<std::vector<double>> neuron_scores;  // [layer][neuron]
    int sample_count = 0;
    std::vector<std::string> warnings;
};

// Mean over batches of the absolute gate gradients of the masked-LM loss.
// Gates are forced to ones for the duration; model parameters are unchanged.
ImportanceScores record_scores(ElasticModel& model, const std::vector<std::vector<MlmExample>>& batches);

// Per-layer, per-kind l2 normalization. All-zero groups stay zero and are
// flagged in `warnings`.
ImportanceScores normalize_scores(const ImportanceScores& scores);

// Top-scoring head/neuron sets per layer at each preserving level,
// ceil(level% * count) wide with a floor of one, ties broken by lower index.
// Levels must be strictly decreasing percentages in (0, 100].
Submap derive_submap(const ImportanceScores& scores, const std::vector<int>& levels,
                     std::vector<std::string>* clamp_report = nullptr);

// Inspection sidecar: one line per layer with ranked head indices and scores.
std::string scores_sidecar_text(const ImportanceScores& scores);

}  // namespace elm
