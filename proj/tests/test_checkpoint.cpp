#include <doctest.h>

#include <cstdio>
#include <filesystem>

#include "elm/checkpoint.hpp"
#include "elm/errors.hpp"
#include "test_helpers.hpp"

using namespace elm;
using namespace elm::test;

TEST_SUITE_BEGIN("checkpoint");

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("elm_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
    static int& counter() {
        static int c = 0;
        return c;
    }
};

}  // namespace

TEST_CASE("checkpoint round-trips parameters, submap, scores bitwise") {
    TempDir dir;
    ModelConfig cfg = tiny_config();
    ElasticModel teacher = full_model(cfg, 401);
    ElasticModel m = build_student(teacher, two_level_submap(cfg));

    Checkpoint::Extras extras;
    ImportanceScores scores;
    scores.head_scores = {{0.5, 0.25}, {0.1, 0.9}};
    scores.neuron_scores = {{0.3}, {0.7}};
    scores.sample_count = 4;
    extras.scores = scores;
    Submap derived = m.submap();
    extras.derived_submap = derived;

    const std::string path = dir.file("model.ckpt");
    Checkpoint::save(path, m, extras);

    Checkpoint::Extras loaded_extras;
    ElasticModel loaded = Checkpoint::load(path, std::nullopt, &loaded_extras);
    CHECK(loaded.config() == m.config());
    CHECK(loaded.submap().entries.size() == m.submap().entries.size());
    auto a = m.named_parameters();
    auto b = loaded.named_parameters();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].first == b[i].first);
        CHECK(a[i].second.data() == b[i].second.data());  // bitwise
    }
    REQUIRE(loaded_extras.scores.has_value());
    CHECK(loaded_extras.scores->head_scores == scores.head_scores);
    REQUIRE(loaded_extras.derived_submap.has_value());
    CHECK(loaded_extras.derived_submap->entries.size() == derived.entries.size());

    // forward outputs identical after reload
    Rng rng(409);
    auto toks = random_tokens(cfg, 8, rng);
    NoGradScope ng;
    auto h1 = m.forward(toks, m.submap().largest(), {}).hiddens.data();
    auto h2 = loaded.forward(toks, loaded.submap().largest(), {}).hiddens.data();
    CHECK(h1 == h2);
}

TEST_CASE("mismatched expectations and corrupt files fail loudly") {
    TempDir dir;
    ModelConfig cfg = tiny_config();
    ElasticModel m = full_model(cfg, 419);
    const std::string path = dir.file("model.ckpt");
    Checkpoint::save(path, m);

    ModelConfig other = cfg;
    other.ffn_dim += 8;
    CHECK_THROWS_AS(Checkpoint::load(path, other), ConfigError);

    CHECK_THROWS_AS(Checkpoint::load(dir.file("missing.ckpt")), IoError);

    write_text_file(dir.file("junk.ckpt"), "definitely not a checkpoint");
    CHECK_THROWS_AS(Checkpoint::load(dir.file("junk.ckpt")), IoError);

    // truncated payload
    auto bytes = read_text_file(path);
    write_text_file(dir.file("trunc.ckpt"), bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(Checkpoint::load(dir.file("trunc.ckpt")), IoError);
}

TEST_CASE("passage index round-trips") {
    TempDir dir;
    PassageIndex index;
    index.dim = 3;
    index.ids = {0, 1, 2};
    index.vectors = {{1.0, 2.0, 3.0}, {-1.5, 0.0, 2.25}, {0.0, 0.0, 1e-7}};
    save_index(dir.file("p.idx"), index);
    PassageIndex back = load_index(dir.file("p.idx"));
    CHECK(back.dim == index.dim);
    CHECK(back.ids == index.ids);
    CHECK(back.vectors == index.vectors);

    write_text_file(dir.file("junk.idx"), "nope");
    CHECK_THROWS_AS(load_index(dir.file("junk.idx")), IoError);
}

TEST_SUITE_END();
