#pragma once

#include <optional>
#include <string>

#include "elm/model.hpp"
#include "elm/pruning.hpp"
#include "elm/retrieval.hpp"

namespace elm {

// Single-file model checkpoint.
//
// Layout: magic "ELMC", little-endian u32 version, little-endian u64 header
// length, JSON header (config, submap, scores when present, parameter names
// with shapes in order), then the parameter arrays back to back as
// little-endian IEEE-754 doubles in header order.
struct Checkpoint {
    static constexpr std::uint32_t kVersion = 1;

    // Present after the scoring stage: importance scores on this model and
    // the sub-structure ladder they induce (in this model's index space,
    // which is the input to student assembly).
    struct Extras {
        std::optional<ImportanceScores> scores;
        std::optional<Submap> derived_submap;
    };

    static void save(const std::string& path, const ElasticModel& model, const Extras& extras = {});
    // Rebuilds the model; throws IoError on malformed files and ConfigError
    // when `expect_config` is given and disagrees with the stored one.
    static ElasticModel load(const std::string& path,
                             const std::optional<ModelConfig>& expect_config = std::nullopt,
                             Extras* extras_out = nullptr);
};

// Passage index sidecar: magic "ELMI", little-endian u32 version, u64 header
// length, JSON header (dim, count, ids), then count*dim little-endian
// doubles, one row per passage in id order.
void save_index(const std::string& path, const PassageIndex& index);
PassageIndex load_index(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

}  // namespace elm
