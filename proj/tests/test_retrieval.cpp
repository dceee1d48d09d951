#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "elm/corpus.hpp"
#include "elm/errors.hpp"
#include "elm/retrieval.hpp"
#include "test_helpers.hpp"

using namespace elm;
using namespace elm::test;

TEST_SUITE_BEGIN("retrieval");

namespace {

ElasticModel ladder_model(const ModelConfig& cfg, std::uint64_t seed = 211) {
    ElasticModel teacher = full_model(cfg, seed);
    return build_student(teacher, two_level_submap(cfg));
}

}  // namespace

TEST_CASE("sim_dense is an exact dot product") {
    std::vector<double> a{1, 0, 2}, b{0, 3, 0}, c{1, 0, 2};
    CHECK(sim_dense(a, b) == 0.0);
    CHECK(sim_dense(c, c) == 5.0);
    Rng rng(223);
    std::vector<double> x(16), y(16);
    for (auto& v : x) v = rng.uniform(-2, 2);
    for (auto& v : y) v = rng.uniform(-2, 2);
    double oracle = 0.0;
    for (int i = 0; i < 16; ++i) oracle += x[static_cast<std::size_t>(i)] * y[static_cast<std::size_t>(i)];
    CHECK(std::abs(sim_dense(x, y) - oracle) < 1e-12);
    std::vector<double> shorter{1.0};
    CHECK_THROWS_AS(sim_dense(x, shorter), DimError);
}

TEST_CASE("query encoding is deterministic and level-sensitive; passages pin the largest") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg);
    const std::string text = "kazobi rel mun";

    auto q1 = encode_query(m, text, 100, 10);
    auto q2 = encode_query(m, text, 100, 10);
    CHECK(q1 == q2);
    CHECK(q1.size() == static_cast<std::size_t>(cfg.hidden_dim));
    for (double v : q1) CHECK(std::isfinite(v));

    // largest-level query encoding equals passage encoding: shared encoder
    auto p = encode_passage(m, text, 10);
    CHECK(q1 == p);

    // a smaller level produces a different vector, but the passage side is
    // unaffected by whatever level the query side uses
    auto q_small = encode_query(m, text, 50, 10);
    CHECK(q_small != q1);
    CHECK(encode_passage(m, text, 10) == p);
}

TEST_CASE("index build covers the corpus and re-encoding matches entries") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg);
    auto rc = make_retrieval_corpus(227, 1000);
    PassageIndex index = build_index(m, rc.passages, 10);
    REQUIRE(index.size() == 1000);
    CHECK(index.vectors[17] == encode_passage(m, rc.passages[17], 10));
}

TEST_CASE("inbatch_nll: uniform ties give ln(m), saturation drives loss to zero") {
    // Oracle model-free check through a fabricated pool: use a model whose
    // encoder we bypass by constructing examples whose candidates coincide.
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg);
    auto rc = make_retrieval_corpus(229, 8);

    // One query with m-1 = 3 hard negatives; force equal sims by using the
    // same passage text for every candidate (identical encodings).
    std::vector<std::string> passages{rc.passages[0], rc.passages[0], rc.passages[0], rc.passages[0]};
    RetrievalExample ex;
    ex.query_tokens = tokenize(rc.train_queries[0], 10);
    ex.positive_id = 0;
    ex.negative_ids = {1, 2, 3};
    NoGradScope ng;
    const double loss = inbatch_nll({ex}, m, passages, 100, 10).item();
    CHECK(loss == doctest::Approx(std::log(4.0)).epsilon(1e-9));

    CHECK_THROWS_AS(inbatch_nll({}, m, passages, 100, 10), ContractError);
    RetrievalExample bad = ex;
    bad.negative_ids = {0};
    CHECK_THROWS_AS(inbatch_nll({bad}, m, passages, 100, 10), ContractError);
}

TEST_CASE("softmax saturation: a 20-unit similarity gap gives near-zero loss") {
    // ln(1 + (m-1) e^{-gap}) with gap = 20 and m = 4 is below 1e-8.
    const double gap = 20.0;
    const double loss = std::log(1.0 + 3.0 * std::exp(-gap));
    CHECK(loss < 1e-8);
}

TEST_CASE("inbatch_nll gradient passes finite differences") {
    ModelConfig cfg = tiny_text_config();
    cfg.n_layers = 1;
    ElasticModel m = ladder_model(cfg, 233);
    auto rc = make_retrieval_corpus(239, 6);
    std::vector<RetrievalExample> batch;
    for (int i = 0; i < 2; ++i) {
        RetrievalExample ex;
        ex.query_tokens = tokenize(rc.train_queries[static_cast<std::size_t>(i)], 8);
        ex.positive_id = i;
        ex.negative_ids = {i + 2};
        batch.push_back(ex);
    }
    auto f = [&]() { return inbatch_nll(batch, m, rc.passages, 50, 10); };
    std::vector<Tensor> probes{m.layers[0].wq[0], m.layers[0].ffn_w1, m.token_embedding};
    CHECK(finite_diff_check(f, probes, 1e-5, 18) < 1e-4);
}

TEST_CASE("rerank scoring: zero weights give zero scores, ordering is reproducible") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg, 241);
    auto rc = make_retrieval_corpus(251, 5);

    std::fill(m.rank_w.data().begin(), m.rank_w.data().end(), 0.0);
    for (int i = 0; i < 5; ++i) {
        CHECK(sim_rerank(m, rc.train_queries[0], rc.passages[static_cast<std::size_t>(i)], 100) == 0.0);
    }

    Rng rng(257);
    for (double& v : m.rank_w.data()) v = rng.uniform(-1, 1);
    std::vector<double> s1, s2;
    for (int i = 0; i < 5; ++i) {
        s1.push_back(sim_rerank(m, rc.train_queries[0], rc.passages[static_cast<std::size_t>(i)], 50));
        s2.push_back(sim_rerank(m, rc.train_queries[0], rc.passages[static_cast<std::size_t>(i)], 50));
    }
    CHECK(s1 == s2);

    // score ordering matches an independent recomputation through fresh calls
    std::vector<int> order1(5), order2(5);
    std::iota(order1.begin(), order1.end(), 0);
    order2 = order1;
    std::sort(order1.begin(), order1.end(), [&](int a, int b) {
        return s1[static_cast<std::size_t>(a)] > s1[static_cast<std::size_t>(b)];
    });
    std::sort(order2.begin(), order2.end(), [&](int a, int b) {
        return sim_rerank(m, rc.train_queries[0], rc.passages[static_cast<std::size_t>(a)], 50) >
               sim_rerank(m, rc.train_queries[0], rc.passages[static_cast<std::size_t>(b)], 50);
    });
    CHECK(order1 == order2);

    // truncation flag on overlong pairs
    bool truncated = false;
    std::string long_passage(200, 'x');
    (void)sim_rerank(m, rc.train_queries[0], long_passage, 100, &truncated);
    CHECK(truncated);
}

TEST_CASE("rerank nll gradient passes finite differences") {
    ModelConfig cfg = tiny_text_config();
    cfg.n_layers = 1;
    ElasticModel m = ladder_model(cfg, 263);
    auto rc = make_retrieval_corpus(269, 5);
    std::vector<RetrievalExample> examples;
    RetrievalExample ex;
    ex.query_tokens = tokenize(rc.train_queries[0], 8);
    ex.positive_id = 0;
    ex.negative_ids = {1, 2};
    examples.push_back(ex);
    auto obj = rerank_objective(examples, rc.train_queries, rc.passages, cfg.max_seq_len);
    std::vector<int> idx{0};
    auto f = [&]() { return obj(m, m.structure(50), idx); };
    std::vector<Tensor> probes{m.rank_w, m.layers[0].wv[0], m.position_embedding};
    CHECK(finite_diff_check(f, probes, 1e-5, 18) < 1e-4);
}

TEST_CASE("mine_localized_negatives: determinism, subset property, short supply") {
    RankedList run;
    run.positive_id = 3;
    for (int i = 0; i < 20; ++i) run.ranked_ids.push_back(i);

    // k_top == m-1: all top false positives, deterministically
    auto all = mine_localized_negatives(run, 4, 4, 99);
    std::sort(all.begin(), all.end());
    CHECK(all == std::vector<int>{0, 1, 2, 4});

    auto a = mine_localized_negatives(run, 10, 3, 1234);
    auto b = mine_localized_negatives(run, 10, 3, 1234);
    CHECK(a == b);
    for (int id : a) {
        CHECK(id != 3);
        CHECK(id <= 10);  // inside the top-10 non-positives
    }

    bool short_supply = false;
    auto few = mine_localized_negatives(run, 2, 5, 7, &short_supply);
    CHECK(short_supply);
    CHECK(few.size() == 2);
}

TEST_CASE("lexical hard negatives exclude the positive and prefer overlap") {
    std::vector<std::string> passages{"alpha beta gamma", "alpha beta delta", "zzz yyy xxx",
                                      "alpha beta gamma extra"};
    auto negs = mine_hard_negatives_lexical("alpha beta gamma", 0, passages, 2);
    REQUIRE(negs.size() == 2);
    CHECK(std::find(negs.begin(), negs.end(), 0) == negs.end());
    CHECK(negs[0] == 3);  // longest shared 4-gram coverage
}

TEST_CASE("evaluate_retrieval matches a brute-force oracle on 50 passages") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg, 271);
    auto rc = make_retrieval_corpus(277, 50);
    PassageIndex index = build_index(m, rc.passages, 12);
    std::vector<int> positives(50);
    std::iota(positives.begin(), positives.end(), 0);
    const std::vector<int> k_list{5, 20, 50};
    auto metrics = evaluate_retrieval(m, index, rc.eval_queries, positives, {100, 50}, k_list, 10);

    for (int level : {100, 50}) {
        double recall5 = 0.0, mrr5 = 0.0, recall_all = 0.0;
        for (int q = 0; q < 50; ++q) {
            auto vec = encode_query(m, rc.eval_queries[static_cast<std::size_t>(q)], level, 10);
            // oracle: full sort by similarity, ties by id
            std::vector<std::pair<double, int>> scored;
            for (int pid = 0; pid < 50; ++pid) {
                scored.emplace_back(-sim_dense(vec, index.vectors[static_cast<std::size_t>(pid)]), pid);
            }
            std::sort(scored.begin(), scored.end());
            int rank = 0;
            for (int r = 0; r < 50; ++r) {
                if (scored[static_cast<std::size_t>(r)].second == q) {
                    rank = r + 1;
                    break;
                }
            }
            if (rank <= 5) {
                recall5 += 1;
                mrr5 += 1.0 / rank;
            }
            recall_all += 1;  // rank <= 50 always
        }
        const auto& got = metrics.at(level);
        CHECK(got.recall_at.at(5) == doctest::Approx(recall5 / 50).epsilon(1e-12));
        CHECK(got.mrr_at.at(5) == doctest::Approx(mrr5 / 50).epsilon(1e-12));
        CHECK(got.recall_at.at(50) == 1.0);  // Recall@|corpus| is always 1
    }
}

TEST_CASE("a query whose positive has the unique best score contributes MRR 1") {
    PassageIndex index;
    index.dim = 2;
    index.ids = {0, 1, 2};
    index.vectors = {{1.0, 0.0}, {0.0, 1.0}, {-1.0, 0.0}};
    std::vector<double> q{1.0, 0.0};
    auto ranking = rank_passages(index, q);
    CHECK(ranking[0] == 0);
}

TEST_CASE("all retriever-by-reranker level pairs execute") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel m = ladder_model(cfg, 281);
    auto rc = make_retrieval_corpus(283, 12);
    PassageIndex index = build_index(m, rc.passages, 12);
    for (int retriever_level : {100, 50}) {
        for (int rank_level : {100, 50}) {
            auto q = encode_query(m, rc.eval_queries[3], retriever_level, 10);
            auto ranking = rank_passages(index, q);
            // rerank the top 4 with the cross encoder
            std::vector<std::pair<double, int>> rescored;
            for (int i = 0; i < 4; ++i) {
                const int pid = ranking[static_cast<std::size_t>(i)];
                rescored.emplace_back(
                    -sim_rerank(m, rc.eval_queries[3], rc.passages[static_cast<std::size_t>(pid)], rank_level),
                    pid);
            }
            std::sort(rescored.begin(), rescored.end());
            CHECK(rescored.size() == 4);
            for (const auto& [score, pid] : rescored) CHECK(std::isfinite(score));
        }
    }
}

TEST_SUITE_END();
