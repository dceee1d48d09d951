#include <doctest.h>

#include <cmath>

#include "elm/corpus.hpp"
#include "elm/distill.hpp"
#include "elm/errors.hpp"
#include "test_helpers.hpp"

using namespace elm;
using namespace elm::test;

TEST_SUITE_BEGIN("distill");

namespace {

RelationTriple triple_from(const std::vector<std::vector<double>>& q,
                           const std::vector<std::vector<double>>& k,
                           const std::vector<std::vector<double>>& v) {
    auto mk = [](const std::vector<std::vector<double>>& rows) {
        std::vector<double> flat;
        for (const auto& r : rows) flat.insert(flat.end(), r.begin(), r.end());
        return Tensor::from({static_cast<int>(rows.size()), static_cast<int>(rows[0].size())}, flat);
    };
    RelationTriple t;
    t.query.push_back(mk(q));
    t.key.push_back(mk(k));
    t.value.push_back(mk(v));
    return t;
}

std::vector<std::vector<int>> token_batch(const ModelConfig& cfg, int batch, int len,
                                          std::uint64_t seed) {
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    for (int i = 0; i < batch; ++i) out.push_back(random_tokens(cfg, len, rng));
    return out;
}

std::vector<double> snapshot_grads(ElasticModel& m) {
    std::vector<double> out;
    for (auto& [name, t] : m.named_parameters()) {
        const auto& g = t.grad();
        out.insert(out.end(), g.begin(), g.end());
    }
    return out;
}

std::vector<double> snapshot_params(const ElasticModel& m) {
    std::vector<double> out;
    for (const auto& [name, t] : m.named_parameters()) {
        out.insert(out.end(), t.data().begin(), t.data().end());
    }
    return out;
}

}  // namespace

TEST_CASE("align_loss basics: zero at identity, nonnegative, shape checks") {
    ModelConfig cfg = tiny_config();
    ElasticModel m = full_model(cfg, 113);
    Rng rng(127);
    Tensor h = random_tensor({6, cfg.hidden_dim}, rng);
    RelationTriple r;
    {
        NoGradScope ng;
        r = m.relations_from_block(h);
    }
    CHECK(align_loss(r, r).item() <= 1e-12);

    Tensor h2 = random_tensor({6, cfg.hidden_dim}, rng);
    RelationTriple r2;
    {
        NoGradScope ng;
        r2 = m.relations_from_block(h2);
    }
    CHECK(align_loss(r, r2).item() >= 0.0);

    RelationTriple fewer = r;
    fewer.query.pop_back();
    CHECK_THROWS_AS(align_loss(fewer, r2), ContractError);
}

TEST_CASE("align_loss matches the hand-computed two-position case") {
    auto teacher = triple_from({{0.7, 0.3}, {0.4, 0.6}}, {{0.2, 0.8}, {0.9, 0.1}},
                               {{0.5, 0.5}, {0.1, 0.9}});
    auto student = triple_from({{0.6, 0.4}, {0.5, 0.5}}, {{0.3, 0.7}, {0.8, 0.2}},
                               {{0.55, 0.45}, {0.2, 0.8}});
    // Independently computed with plain scalar arithmetic.
    const double expected = 0.07293682808423624;
    CHECK(std::abs(align_loss(teacher, student).item() - expected) < 1e-10);
}

TEST_CASE("align_loss rejects teacher relations that carry gradients") {
    ModelConfig cfg = tiny_config();
    ElasticModel m = full_model(cfg, 113);
    Rng rng(131);
    Tensor h = random_tensor({4, cfg.hidden_dim}, rng);
    Tape tape;
    TapeScope scope(tape);
    h.set_requires_grad(true);
    RelationTriple tracked = m.relations_from_block(h);
    CHECK_THROWS_AS(align_loss(tracked, tracked), ContractError);
}

TEST_CASE("elastic gradient accumulation equals scaled sum of per-structure gradients") {
    ModelConfig cfg = tiny_config();
    ElasticModel teacher = full_model(cfg, 137);
    Submap ladder = two_level_submap(cfg);
    ElasticModel student = build_student(teacher, ladder);
    auto batch = token_batch(cfg, 2, 8, 139);

    student.zero_grads();
    accumulate_elastic_gradients(teacher, student, batch, LossScaling::kAverageOverStructures);
    auto combined = snapshot_grads(student);

    // Oracle: each structure separately, then average.
    std::vector<std::vector<double>> separate;
    for (const auto& s : student.submap().entries) {
        student.zero_grads();
        Submap single;
        single.entries = {s};
        Submap saved = student.submap();
        student.mutable_submap() = single;
        accumulate_elastic_gradients(teacher, student, batch, LossScaling::kSumOverStructures);
        separate.push_back(snapshot_grads(student));
        student.mutable_submap() = saved;
    }
    REQUIRE(separate.size() == 2);
    double worst = 0.0;
    for (std::size_t i = 0; i < combined.size(); ++i) {
        const double expected = (separate[0][i] + separate[1][i]) / 2.0;
        worst = std::max(worst, std::abs(combined[i] - expected));
    }
    CHECK(worst < 1e-10);
    student.zero_grads();
}

TEST_CASE("shared parameters receive contributions from every structure") {
    ModelConfig cfg = tiny_config();
    ElasticModel teacher = full_model(cfg, 149);
    ElasticModel student = build_student(teacher, two_level_submap(cfg));
    auto batch = token_batch(cfg, 1, 8, 151);

    auto grads_for = [&](int level) {
        student.zero_grads();
        Submap single;
        single.entries = {student.structure(level)};
        Submap saved = student.submap();
        student.mutable_submap() = single;
        accumulate_elastic_gradients(teacher, student, batch, LossScaling::kSumOverStructures);
        student.mutable_submap() = saved;
        auto& wq = student.layers[0].wq[0];  // head 0 is retained by both levels
        double norm = 0.0;
        for (double g : wq.grad()) norm += std::abs(g);
        return norm;
    };
    CHECK(grads_for(100) > 0.0);
    CHECK(grads_for(50) > 0.0);
    student.zero_grads();
}

TEST_CASE("teacher stays bitwise frozen through elastic steps") {
    ModelConfig cfg = tiny_config();
    ElasticModel teacher = full_model(cfg, 157);
    ElasticModel student = build_student(teacher, two_level_submap(cfg));
    auto before = snapshot_params(teacher);
    AdamW opt(student.named_parameters(), 1e-3, 0.01, 5.0, 10, 0.0);
    for (int step = 0; step < 3; ++step) {
        elastic_step(teacher, student, token_batch(cfg, 2, 8, 163 + step), opt,
                     LossScaling::kAverageOverStructures);
    }
    CHECK(snapshot_params(teacher) == before);
}

TEST_CASE("size-one submap degenerates to a plain distillation step") {
    ModelConfig cfg = tiny_config();
    ElasticModel teacher = full_model(cfg, 167);

    Submap single;
    single.entries = {SubStructure::full(100, cfg)};
    ElasticModel a(cfg, single, 173);
    ElasticModel b(cfg, single, 173);

    std::vector<double> losses_a, losses_b;
    AdamW opt_a(a.named_parameters(), 1e-3, 0.01, 5.0, 4, 0.0);
    AdamW opt_b(b.named_parameters(), 1e-3, 0.01, 5.0, 4, 0.0);
    for (int step = 0; step < 4; ++step) {
        auto batch = token_batch(cfg, 2, 8, 179 + step);
        // path A: the elastic traversal
        losses_a.push_back(elastic_step(teacher, a, batch, opt_a,
                                        LossScaling::kAverageOverStructures)[100]);
        // path B: a hand-written single-model distillation step
        Tape tape;
        Tensor loss;
        {
            TapeScope scope(tape);
            std::vector<Tensor> partial;
            for (const auto& toks : batch) {
                auto trel = teacher.teacher_relations(toks, teacher.submap().largest());
                ForwardResult r = b.forward(toks, b.submap().largest(), {});
                partial.push_back(align_loss(trel, b.relations_from_block(r.hiddens)));
            }
            loss = scale(add(partial[0], partial[1]), 0.5);
            tape.backward(loss);
        }
        losses_b.push_back(loss.item());
        opt_b.step();
    }
    for (int i = 0; i < 4; ++i) {
        CHECK(std::abs(losses_a[static_cast<std::size_t>(i)] - losses_b[static_cast<std::size_t>(i)]) < 1e-12);
    }
    CHECK(snapshot_params(a) == snapshot_params(b));
}

TEST_CASE("distill lowers held-out alignment loss at every level") {
    ModelConfig cfg = tiny_text_config();
    ElasticModel teacher = full_model(cfg, 181);
    ElasticModel student = build_student(teacher, two_level_submap(cfg));

    std::string corpus = fixture_corpus(11, 1 << 15);
    DistillConfig dc;
    dc.batch_size = 4;
    dc.max_steps = 25;
    dc.learning_rate = 2e-3;
    dc.warmup_proportion = 0.1;
    dc.seq_len = 10;
    dc.heldout_windows = 8;
    dc.seed = 191;

    TrainingTrace trace = distill(teacher, student, corpus, dc);
    REQUIRE(trace.initial_heldout.size() == 2);
    for (const auto& [level, before] : trace.initial_heldout) {
        const double after = trace.final_heldout.at(level);
        CHECK(after < before);
    }
    // one loss entry per (step, structure)
    CHECK(trace.rows.size() == 2u * 25u);
    CHECK(!trace.to_jsonl().empty());
}

TEST_CASE("pretraining: uniform init sits at ln(V), training helps, seeds reproduce") {
    ModelConfig cfg = tiny_text_config();
    std::string corpus = fixture_corpus(13, 1 << 15);

    DistillConfig zero;
    zero.epochs = 0;
    zero.max_steps = 0;
    zero.seq_len = 10;
    zero.heldout_windows = 8;
    {
        ElasticModel m = full_model(cfg, 193);
        TrainingTrace t = pretrain_teacher(m, corpus, zero);
        CHECK(t.heldout_before_pretrain ==
              doctest::Approx(std::log(cfg.vocab_size)).epsilon(0.05));
        CHECK(t.heldout_after_pretrain == t.heldout_before_pretrain);
    }

    DistillConfig dc = zero;
    dc.max_steps = 40;
    dc.batch_size = 4;
    dc.learning_rate = 2e-3;
    dc.warmup_proportion = 0.1;
    dc.seed = 197;
    ElasticModel m1 = full_model(cfg, 199);
    TrainingTrace t1 = pretrain_teacher(m1, corpus, dc);
    CHECK(t1.heldout_after_pretrain < t1.heldout_before_pretrain);

    ElasticModel m2 = full_model(cfg, 199);
    TrainingTrace t2 = pretrain_teacher(m2, corpus, dc);
    CHECK(snapshot_params(m1) == snapshot_params(m2));
    for (std::size_t i = 0; i < t1.rows.size(); ++i) {
        CHECK(t1.rows[i].loss == t2.rows[i].loss);
    }
}

TEST_CASE("config validation rejects bad values") {
    DistillConfig dc;
    dc.warmup_proportion = 1.0;
    CHECK_THROWS_AS(dc.validate(), ConfigError);
    dc = DistillConfig{};
    dc.grad_clip = 0.0;
    CHECK_THROWS_AS(dc.validate(), ConfigError);
    dc = DistillConfig{};
    dc.batch_size = 0;
    CHECK_THROWS_AS(dc.validate(), ConfigError);
}

TEST_SUITE_END();
