#include "elm/corpus.hpp"

#include <algorithm>

#include "elm/errors.hpp"

namespace elm {

namespace {

const char* kOnsets[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
                         "br", "dr", "gr", "kr", "pl", "st", "tr"};
const char* kVowels[] = {"a", "e", "i", "o", "u", "ai", "ou"};
const char* kCodas[] = {"", "", "n", "r", "s", "l", "m", "x"};

std::string make_word(Rng& rng, int syllables) {
    std::string w;
    for (int s = 0; s < syllables; ++s) {
        w += kOnsets[rng.below(sizeof(kOnsets) / sizeof(kOnsets[0]))];
        w += kVowels[rng.below(sizeof(kVowels) / sizeof(kVowels[0]))];
    }
    w += kCodas[rng.below(sizeof(kCodas) / sizeof(kCodas[0]))];
    return w;
}

std::vector<std::string> make_vocab(Rng& rng, int size, int syllables) {
    std::vector<std::string> vocab;
    vocab.reserve(static_cast<std::size_t>(size));
    while (static_cast<int>(vocab.size()) < size) {
        std::string w = make_word(rng, syllables);
        if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(w);
    }
    return vocab;
}

}  // namespace

std::string fixture_corpus(std::uint64_t seed, std::size_t min_bytes) {
    Rng rng(seed);
    const int kVocab = 240;
    auto vocab = make_vocab(rng, kVocab, 2);
    // Skewed bigram chain: each word has a handful of favoured successors.
    std::vector<std::vector<int>> succ(static_cast<std::size_t>(kVocab));
    for (auto& s : succ) {
        for (int k = 0; k < 4; ++k) s.push_back(rng.below_int(kVocab));
    }
    std::string out;
    out.reserve(min_bytes + 4096);
    int word = rng.below_int(kVocab);
    int in_sentence = 0;
    const int sentence_len = 9;
    while (out.size() < min_bytes) {
        out += vocab[static_cast<std::size_t>(word)];
        ++in_sentence;
        if (in_sentence >= sentence_len) {
            out += ".\n";
            in_sentence = 0;
            word = rng.below_int(kVocab);
        } else {
            out += ' ';
            // 85% follow the chain, 15% jump anywhere.
            if (rng.uniform() < 0.85) {
                const auto& s = succ[static_cast<std::size_t>(word)];
                word = s[rng.below(s.size())];
            } else {
                word = rng.below_int(kVocab);
            }
        }
    }
    return out;
}

std::vector<int> tokenize(const std::string& text, int max_len) {
    if (max_len < 1) throw ContractError("tokenize: max_len must be >= 1");
    std::vector<int> ids;
    ids.reserve(static_cast<std::size_t>(max_len));
    ids.push_back(tok::kCls);
    for (unsigned char c : text) {
        if (static_cast<int>(ids.size()) >= max_len) break;
        ids.push_back(static_cast<int>(c));
    }
    return ids;
}

MlmSampler::MlmSampler(const std::string& text, int seq_len, double mask_rate, std::uint64_t seed)
    : text_(text), seq_len_(seq_len), mask_rate_(mask_rate), rng_(seed) {
    if (seq_len_ < 2) throw ContractError("MlmSampler: seq_len must be >= 2");
    const std::size_t window = static_cast<std::size_t>(seq_len_ - 1);
    if (text_.size() < window * 4) throw ContractError("MlmSampler: text too short");
    // Reserve the final eighth of the text for held-out windows.
    usable_ = text_.size() - text_.size() / 8 - window;
}

MlmExample MlmSampler::make_window(std::size_t offset, Rng& rng) const {
    const int content = seq_len_ - 1;
    MlmExample ex;
    ex.tokens.resize(static_cast<std::size_t>(seq_len_));
    ex.targets.assign(static_cast<std::size_t>(seq_len_), -1);
    ex.tokens[0] = tok::kCls;
    for (int i = 0; i < content; ++i) {
        ex.tokens[static_cast<std::size_t>(i + 1)] =
            static_cast<int>(static_cast<unsigned char>(text_[offset + static_cast<std::size_t>(i)]));
    }
    int masked = 0;
    for (int i = 1; i < seq_len_; ++i) {
        if (rng.uniform() < mask_rate_) {
            ex.targets[static_cast<std::size_t>(i)] = ex.tokens[static_cast<std::size_t>(i)];
            ex.tokens[static_cast<std::size_t>(i)] = tok::kMask;
            ++masked;
        }
    }
    if (masked == 0) {
        const int i = 1 + rng.below_int(content);
        ex.targets[static_cast<std::size_t>(i)] = ex.tokens[static_cast<std::size_t>(i)];
        ex.tokens[static_cast<std::size_t>(i)] = tok::kMask;
    }
    return ex;
}

MlmExample MlmSampler::next() {
    const std::size_t offset = rng_.below(usable_);
    return make_window(offset, rng_);
}

std::vector<MlmExample> MlmSampler::heldout(int count) const {
    // Fixed windows and a fixed masking stream, independent of next().
    Rng rng(0xe1a57ull);
    const std::size_t window = static_cast<std::size_t>(seq_len_ - 1);
    const std::size_t start = usable_ + window;
    std::vector<MlmExample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        std::size_t offset = start + static_cast<std::size_t>(i) * window;
        if (offset + window >= text_.size()) offset = start + (static_cast<std::size_t>(i) * 37) % (text_.size() - start - window);
        out.push_back(make_window(offset, rng));
    }
    return out;
}

RetrievalCorpus make_retrieval_corpus(std::uint64_t seed, int n_passages) {
    if (n_passages < 2) throw ContractError("make_retrieval_corpus: need at least 2 passages");
    Rng rng(seed);
    auto fillers = make_vocab(rng, 48, 2);
    // Markers are longer words, disjoint from filler vocab by construction.
    std::vector<std::string> markers;
    while (static_cast<int>(markers.size()) < n_passages) {
        std::string m = make_word(rng, 3);
        if (std::find(markers.begin(), markers.end(), m) == markers.end() &&
            std::find(fillers.begin(), fillers.end(), m) == fillers.end()) {
            markers.push_back(m);
        }
    }
    auto fill = [&](Rng& r, int n) {
        std::string s;
        for (int i = 0; i < n; ++i) {
            s += ' ';
            s += fillers[r.below(fillers.size())];
        }
        return s;
    };
    RetrievalCorpus c;
    c.passages.reserve(static_cast<std::size_t>(n_passages));
    c.train_queries.reserve(static_cast<std::size_t>(n_passages));
    c.eval_queries.reserve(static_cast<std::size_t>(n_passages));
    for (int i = 0; i < n_passages; ++i) {
        const std::string& m = markers[static_cast<std::size_t>(i)];
        // Marker leads the passage and recurs once mid-text.
        c.passages.push_back(m + fill(rng, 3) + " " + m + fill(rng, 2));
        c.train_queries.push_back(m + fill(rng, 2));
        c.eval_queries.push_back(m + fill(rng, 2));
    }
    return c;
}

ClassificationData make_classification_data(std::uint64_t seed, int n_examples) {
    Rng rng(seed);
    auto family_a = make_vocab(rng, 24, 2);
    auto family_b = make_vocab(rng, 24, 3);
    ClassificationData d;
    d.texts.reserve(static_cast<std::size_t>(n_examples));
    d.labels.reserve(static_cast<std::size_t>(n_examples));
    for (int i = 0; i < n_examples; ++i) {
        const int label = rng.below_int(2);
        const auto& fam = (label == 0) ? family_a : family_b;
        std::string s;
        for (int w = 0; w < 5; ++w) {
            if (w) s += ' ';
            s += fam[rng.below(fam.size())];
        }
        d.texts.push_back(std::move(s));
        d.labels.push_back(label);
    }
    return d;
}

}  // namespace elm
