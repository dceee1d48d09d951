#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "elm/tensor.hpp"

namespace elm {

struct ModelConfig {
    int n_layers = 4;
    int hidden_dim = 64;
    int n_heads = 8;
    int head_dim = 8;
    int ffn_dim = 256;
    int vocab_size = 256;
    int max_seq_len = 64;
    int relation_heads = 8;
    int relation_dim = 8;
    int n_classes = 2;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

// Retained atomic modules for one preserving level. Index sets are sorted
// ascending (canonical form) and live in the owning model's index space.
struct SubStructure {
    int level_label = 100;  // preserving percentage
    std::vector<std::vector<int>> head_sets;    // per layer
    std::vector<std::vector<int>> neuron_sets;  // per layer

    void validate(int n_layers, int n_heads, int ffn_dim) const;
    static SubStructure full(int level_label, const ModelConfig& cfg);
};

// Ordered ensemble of sub-structures, largest first. Consecutive entries
// nest: every index set of the smaller is a subset of the larger's.
struct Submap {
    std::vector<SubStructure> entries;

    void validate(const ModelConfig& cfg) const;
    const SubStructure& largest() const;
    const SubStructure& smallest() const;
    const SubStructure& at_level(int level_label) const;
    bool has_level(int level_label) const;
    std::vector<int> levels() const;
};

enum class ExecMode {
    kMasked,  // gates as multipliers; differentiable w.r.t. the gates
    kSliced,  // pruned modules are skipped outright
};

// Per-layer gate vectors. The model owns an all-ones set used for score
// recording; callers may substitute their own.
struct GateSet {
    std::vector<Tensor> head_gates;    // length n_heads each
    std::vector<Tensor> neuron_gates;  // length ffn_dim each

    static GateSet ones(const ModelConfig& cfg, bool requires_grad);
    void set_from_structure(const SubStructure& s, const ModelConfig& cfg);
    void set_all_ones();
};

// Optional per-forward instrumentation: pre-gate head outputs, kept so the
// chain-rule identity between gate gradients and output inner products can
// be checked after backward.
struct ForwardCapture {
    std::vector<std::vector<Tensor>> head_outputs;  // [layer][head], n x d
};

struct ForwardOptions {
    ExecMode mode = ExecMode::kSliced;
    GateSet* gates = nullptr;  // masked mode only; defaults to 0/1 gates from the structure
    ForwardCapture* capture = nullptr;
    bool want_mlm = false;
    bool want_cls_vector = false;
    bool want_cls_logits = false;
    bool capture_last_attn_input = false;
};

struct ForwardResult {
    Tensor hiddens;          // n x d
    Tensor mlm_logits;       // n x V when requested
    Tensor cls_vector;       // 1 x d when requested
    Tensor cls_logits;       // 1 x n_classes when requested
    Tensor last_attn_input;  // n x d input of the final attention block, when requested
};

// Row-stochastic n x n self-relation matrices per relation head, for the
// query, key and value streams.
struct RelationTriple {
    std::vector<Tensor> query;
    std::vector<Tensor> key;
    std::vector<Tensor> value;
};

struct LayerParams {
    std::vector<Tensor> wq, wk, wv;  // per head, d x head_dim
    std::vector<Tensor> bq, bk, bv;  // per head, head_dim
    std::vector<Tensor> wo;          // per head, head_dim x d
    Tensor bo;                       // d
    Tensor ln1_gain, ln1_bias;
    Tensor ffn_w1;  // d x ffn_dim
    Tensor ffn_b1;  // ffn_dim
    Tensor ffn_w2;  // ffn_dim x d
    Tensor ffn_b2;  // d
    Tensor ln2_gain, ln2_bias;
};

// Encoder-only transformer whose attention heads and FFN neurons can be
// switched off per sub-structure. All sub-structures share this one
// parameter store; storage is sized by the largest entry of the submap.
class ElasticModel {
  public:
    ElasticModel(ModelConfig cfg, Submap submap, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    const Submap& submap() const { return submap_; }
    Submap& mutable_submap() { return submap_; }

    // Structure handle for a preserving level; throws StructureError on
    // unknown labels. The handle is independent of model state.
    const SubStructure& structure(int level_label) const;

    ForwardResult forward(std::span<const int> tokens, const SubStructure& s,
                          const ForwardOptions& opt = {}) const;

    // Relations of the dedicated relation block applied to final hidden
    // states (the student-side path). Differentiable.
    RelationTriple relations_from_block(const Tensor& hiddens) const;

    // Relations read off the last attention block's parameters, with the
    // original heads merged and re-split into `relation_heads` slices (the
    // teacher-side path). `x` is the input to that attention block.
    RelationTriple relations_from_last_attention(const Tensor& x) const;

    // Convenience: forward + teacher-side relations.
    RelationTriple teacher_relations(std::span<const int> tokens, const SubStructure& s) const;

    // Multiply-add count of one encoder forward under `s` at this length.
    static std::int64_t flops(const ModelConfig& cfg, const SubStructure& s, int seq_len);

    // All trainable parameters, with stable names for checkpoints/optimizers.
    std::vector<std::pair<std::string, Tensor>> named_parameters();
    std::vector<std::pair<std::string, Tensor>> named_parameters() const;
    std::size_t parameter_count() const;
    void set_requires_grad(bool rg);
    void zero_grads();

    GateSet& scoring_gates() { return scoring_gates_; }

    // parameter access for surgery (student construction, tests)
    Tensor token_embedding, position_embedding;
    Tensor emb_ln_gain, emb_ln_bias;
    std::vector<LayerParams> layers;
    std::vector<Tensor> rel_wq, rel_wk, rel_wv;  // per relation head, d x relation_dim
    Tensor mlm_w, mlm_b;
    Tensor cls_w, cls_b;
    Tensor rank_w;  // hidden_dim, scoring vector for cross-encoded pairs

  private:
    Tensor attention_block(const Tensor& x, int layer, const SubStructure& s,
                           const ForwardOptions& opt) const;
    Tensor ffn_block(const Tensor& x, int layer, const SubStructure& s,
                     const ForwardOptions& opt) const;

    ModelConfig cfg_;
    Submap submap_;
    mutable GateSet scoring_gates_;
};

// Student assembly: reindex `submap` (given in teacher index space) into the
// compact space of its largest entry, and initialize the student's parameter
// store from the teacher's retained heads and neurons. The returned model
// stores exactly the largest sub-structure's parameters.
ElasticModel build_student(const ElasticModel& teacher, const Submap& teacher_space_submap);

}  // namespace elm
