#include "elm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "elm/errors.hpp"

namespace elm {

namespace {

using nlohmann::json;

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw IoError("truncated file");
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw IoError("truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_doubles(std::ostream& os, const std::vector<double>& xs) {
    for (double x : xs) {
        std::uint64_t bits;
        std::memcpy(&bits, &x, 8);
        write_u64(os, bits);
    }
}

void read_doubles(std::istream& is, std::vector<double>& xs) {
    for (double& x : xs) {
        const std::uint64_t bits = read_u64(is);
        std::memcpy(&x, &bits, 8);
    }
}

json config_to_json(const ModelConfig& c) {
    return json{{"n_layers", c.n_layers},       {"hidden_dim", c.hidden_dim},
                {"n_heads", c.n_heads},         {"head_dim", c.head_dim},
                {"ffn_dim", c.ffn_dim},         {"vocab_size", c.vocab_size},
                {"max_seq_len", c.max_seq_len}, {"relation_heads", c.relation_heads},
                {"relation_dim", c.relation_dim}, {"n_classes", c.n_classes}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.n_layers = j.at("n_layers").get<int>();
    c.hidden_dim = j.at("hidden_dim").get<int>();
    c.n_heads = j.at("n_heads").get<int>();
    c.head_dim = j.at("head_dim").get<int>();
    c.ffn_dim = j.at("ffn_dim").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.max_seq_len = j.at("max_seq_len").get<int>();
    c.relation_heads = j.at("relation_heads").get<int>();
    c.relation_dim = j.at("relation_dim").get<int>();
    c.n_classes = j.at("n_classes").get<int>();
    return c;
}

json submap_to_json(const Submap& s) {
    json levels = json::array();
    for (const auto& e : s.entries) {
        levels.push_back(json{{"level", e.level_label}, {"heads", e.head_sets}, {"neurons", e.neuron_sets}});
    }
    return levels;
}

Submap submap_from_json(const json& j) {
    Submap s;
    for (const auto& e : j) {
        SubStructure sub;
        sub.level_label = e.at("level").get<int>();
        sub.head_sets = e.at("heads").get<std::vector<std::vector<int>>>();
        sub.neuron_sets = e.at("neurons").get<std::vector<std::vector<int>>>();
        s.entries.push_back(std::move(sub));
    }
    return s;
}

}  // namespace

void Checkpoint::save(const std::string& path, const ElasticModel& model, const Extras& extras) {
    json header;
    header["config"] = config_to_json(model.config());
    header["submap"] = submap_to_json(model.submap());
    if (extras.scores.has_value()) {
        header["scores"] = json{{"heads", extras.scores->head_scores},
                                {"neurons", extras.scores->neuron_scores},
                                {"samples", extras.scores->sample_count}};
    }
    if (extras.derived_submap.has_value()) {
        header["derived_submap"] = submap_to_json(*extras.derived_submap);
    }
    json params = json::array();
    for (const auto& [name, t] : model.named_parameters()) {
        params.push_back(json{{"name", name}, {"shape", t.shape()}});
    }
    header["params"] = params;
    const std::string header_text = header.dump();

    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("ELMC", 4);
    write_u32(os, kVersion);
    write_u64(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : model.named_parameters()) write_doubles(os, t.data());
    if (!os) throw IoError("write failed: " + path);
}

ElasticModel Checkpoint::load(const std::string& path, const std::optional<ModelConfig>& expect_config,
                              Extras* extras_out) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ELMC", 4) != 0) throw IoError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != kVersion) {
        throw IoError("unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t header_len = read_u64(is);
    std::string header_text(header_len, '\0');
    is.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw IoError("truncated checkpoint header");
    json header = json::parse(header_text, nullptr, false);
    if (header.is_discarded()) throw IoError("corrupt checkpoint header");

    const ModelConfig cfg = config_from_json(header.at("config"));
    if (expect_config.has_value() && !(cfg == *expect_config)) {
        throw ConfigError("checkpoint config does not match the expected config");
    }
    Submap submap = submap_from_json(header.at("submap"));
    ElasticModel model(cfg, std::move(submap), 0);
    auto params = model.named_parameters();
    const auto& header_params = header.at("params");
    if (header_params.size() != params.size()) throw IoError("checkpoint parameter list mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& hp = header_params[i];
        if (hp.at("name").get<std::string>() != params[i].first) {
            throw IoError("checkpoint parameter order mismatch at " + params[i].first);
        }
        const auto shape = hp.at("shape").get<std::vector<int>>();
        if (shape != params[i].second.shape()) {
            throw ConfigError("checkpoint shape mismatch for " + params[i].first);
        }
        read_doubles(is, params[i].second.data());
    }
    if (!is) throw IoError("truncated checkpoint payload");

    if (extras_out != nullptr) {
        extras_out->scores.reset();
        extras_out->derived_submap.reset();
        if (header.contains("scores")) {
            ImportanceScores s;
            s.head_scores = header["scores"].at("heads").get<std::vector<std::vector<double>>>();
            s.neuron_scores = header["scores"].at("neurons").get<std::vector<std::vector<double>>>();
            s.sample_count = header["scores"].at("samples").get<int>();
            extras_out->scores = std::move(s);
        }
        if (header.contains("derived_submap")) {
            extras_out->derived_submap = submap_from_json(header["derived_submap"]);
        }
    }
    return model;
}

void save_index(const std::string& path, const PassageIndex& index) {
    json header{{"dim", index.dim}, {"count", index.ids.size()}, {"ids", index.ids}};
    const std::string header_text = header.dump();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write("ELMI", 4);
    write_u32(os, 1);
    write_u64(os, header_text.size());
    os.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& v : index.vectors) {
        if (static_cast<int>(v.size()) != index.dim) throw ContractError("index row has wrong dimension");
        write_doubles(os, v);
    }
    if (!os) throw IoError("write failed: " + path);
}

PassageIndex load_index(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "ELMI", 4) != 0) throw IoError("not an index file: " + path);
    const std::uint32_t version = read_u32(is);
    if (version != 1) throw IoError("unsupported index version");
    const std::uint64_t header_len = read_u64(is);
    std::string header_text(header_len, '\0');
    is.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!is) throw IoError("truncated index header");
    json header = json::parse(header_text, nullptr, false);
    if (header.is_discarded()) throw IoError("corrupt index header");
    PassageIndex index;
    index.dim = header.at("dim").get<int>();
    index.ids = header.at("ids").get<std::vector<int>>();
    const std::size_t count = header.at("count").get<std::size_t>();
    if (count != index.ids.size()) throw IoError("index header count mismatch");
    index.vectors.assign(count, std::vector<double>(static_cast<std::size_t>(index.dim)));
    for (auto& v : index.vectors) read_doubles(is, v);
    if (!is) throw IoError("truncated index payload");
    return index;
}

std::string read_text_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string out((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return out;
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    os.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!os) throw IoError("write failed: " + path);
}

}  // namespace elm
