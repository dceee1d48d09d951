#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "elm/rng.hpp"

namespace elm {

// Byte-level token ids. The first four byte values are reserved; generated
// corpora are printable ASCII so the reservation never collides.
namespace tok {
constexpr int kPad = 0;
constexpr int kCls = 1;
constexpr int kSep = 2;
constexpr int kMask = 3;
}  // namespace tok

// Deterministic pseudo-text fixture: syllable-built words emitted through a
// skewed bigram chain, so a byte-level model has real structure to learn.
// Same seed, same bytes, any platform.
std::string fixture_corpus(std::uint64_t seed = 41, std::size_t min_bytes = 1 << 20);

// [CLS] + text bytes, truncated to max_len tokens.
std::vector<int> tokenize(const std::string& text, int max_len);

struct MlmExample {
    std::vector<int> tokens;   // with [CLS] and masks applied
    std::vector<int> targets;  // original id at masked positions, -1 elsewhere
};

// Fixed-length windows sampled from `text`; mask_rate of the non-[CLS]
// positions are replaced by the mask symbol and become targets (at least one
// per window). Loss is taken on masked positions only.
class MlmSampler {
  public:
    MlmSampler(const std::string& text, int seq_len, double mask_rate, std::uint64_t seed);
    MlmExample next();
    // Deterministic evaluation windows taken from the tail of the text.
    std::vector<MlmExample> heldout(int count) const;

  private:
    MlmExample make_window(std::size_t offset, Rng& rng) const;
    const std::string text_;
    int seq_len_;
    double mask_rate_;
    Rng rng_;
    std::size_t usable_;  // sampling region; tail is reserved for heldout
};

// Synthetic retrieval task. Every passage carries a unique marker word; a
// query repeats the marker with fresh filler, so exact-match ranking is
// learnable but non-trivial for a byte-level encoder.
struct RetrievalCorpus {
    std::vector<std::string> passages;      // index = passage id
    std::vector<std::string> train_queries; // one per passage
    std::vector<std::string> eval_queries;  // one per passage, fresh filler
};

RetrievalCorpus make_retrieval_corpus(std::uint64_t seed, int n_passages);

// Two-dialect classification toy: label = which word family the text uses.
struct ClassificationData {
    std::vector<std::string> texts;
    std::vector<int> labels;  // 0 or 1
};

ClassificationData make_classification_data(std::uint64_t seed, int n_examples);

}  // namespace elm
