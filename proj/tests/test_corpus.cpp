#include <doctest.h>

#include "elm/corpus.hpp"
#include "test_helpers.hpp"

using namespace elm;

TEST_SUITE_BEGIN("corpus");

TEST_CASE("fixture corpus is deterministic, sized, and printable") {
    std::string a = fixture_corpus(41, 1 << 20);
    std::string b = fixture_corpus(41, 1 << 20);
    CHECK(a == b);
    CHECK(a.size() >= (1u << 20));
    for (std::size_t i = 0; i < a.size(); i += 997) {
        const unsigned char c = static_cast<unsigned char>(a[i]);
        CHECK(c >= 10);  // printable ASCII or newline; reserved ids never appear
    }
}

TEST_CASE("tokenize prepends CLS and truncates") {
    auto ids = tokenize("ab", 8);
    CHECK(ids == std::vector<int>{tok::kCls, 'a', 'b'});
    auto lim = tokenize("abcdef", 4);
    CHECK(lim.size() == 4);
    CHECK(lim[0] == tok::kCls);
}

TEST_CASE("mlm sampler masks and keeps targets aligned") {
    std::string text = fixture_corpus(5, 1 << 14);
    MlmSampler sampler(text, 32, 0.15, 9);
    for (int i = 0; i < 20; ++i) {
        MlmExample ex = sampler.next();
        REQUIRE(ex.tokens.size() == 32);
        REQUIRE(ex.targets.size() == 32);
        CHECK(ex.tokens[0] == tok::kCls);
        int masked = 0;
        for (std::size_t j = 0; j < ex.tokens.size(); ++j) {
            if (ex.targets[j] >= 0) {
                CHECK(ex.tokens[j] == tok::kMask);
                ++masked;
            } else {
                CHECK(ex.tokens[j] != tok::kMask);
            }
        }
        CHECK(masked >= 1);
    }
    // held-out windows are stable across samplers with different seeds
    MlmSampler other(text, 32, 0.15, 1234);
    auto h1 = sampler.heldout(4);
    auto h2 = other.heldout(4);
    for (int i = 0; i < 4; ++i) {
        CHECK(h1[static_cast<std::size_t>(i)].tokens == h2[static_cast<std::size_t>(i)].tokens);
    }
}

TEST_CASE("retrieval corpus markers are unique and shared with queries") {
    auto rc = make_retrieval_corpus(3, 32);
    REQUIRE(rc.passages.size() == 32);
    REQUIRE(rc.train_queries.size() == 32);
    REQUIRE(rc.eval_queries.size() == 32);
    for (int i = 0; i < 32; ++i) {
        // the marker is the first word of both passage and queries
        auto marker = rc.passages[static_cast<std::size_t>(i)].substr(
            0, rc.passages[static_cast<std::size_t>(i)].find(' '));
        CHECK(rc.train_queries[static_cast<std::size_t>(i)].rfind(marker, 0) == 0);
        CHECK(rc.eval_queries[static_cast<std::size_t>(i)].rfind(marker, 0) == 0);
        for (int j = 0; j < 32; ++j) {
            if (j == i) continue;
            CHECK(rc.passages[static_cast<std::size_t>(j)].rfind(marker + " ", 0) != 0);
        }
    }
}

TEST_CASE("classification data uses two label families") {
    auto data = make_classification_data(4, 64);
    int ones = 0;
    for (int l : data.labels) ones += l;
    CHECK(ones > 8);
    CHECK(ones < 56);
}

TEST_SUITE_END();
