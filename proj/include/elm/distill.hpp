#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "elm/corpus.hpp"
#include "elm/model.hpp"

namespace elm {

enum class LossScaling {
    kAverageOverStructures,  // loss / |submap| per structure (default)
    kSumOverStructures,
};

struct DistillConfig {
    int batch_size = 8;
    double learning_rate = 3e-4;
    double weight_decay = 1e-2;
    int epochs = 1;
    int max_steps = 0;  // 0 = derive from epochs and corpus size
    double warmup_proportion = 0.01;
    double grad_clip = 5.0;
    std::uint64_t seed = 7;
    LossScaling loss_scaling = LossScaling::kAverageOverStructures;
    int seq_len = 64;
    double mask_rate = 0.15;
    int heldout_windows = 32;

    void validate() const;
};

struct TraceRow {
    int step = 0;
    int level = 0;
    double loss = 0.0;
    double grad_norm = 0.0;
    double millis = 0.0;
};

struct TrainingTrace {
    std::vector<TraceRow> rows;
    std::map<int, double> initial_heldout;  // level -> loss before training
    std::map<int, double> final_heldout;    // level -> loss after training
    double heldout_before_pretrain = 0.0;
    double heldout_after_pretrain = 0.0;

    std::string to_jsonl() const;
};

// Decoupled weight decay with bias-corrected first/second moments and a
// global gradient-norm clip. Biases and norm gains/biases are not decayed.
class AdamW {
  public:
    AdamW(std::vector<std::pair<std::string, Tensor>> params, double lr, double weight_decay,
          double clip, int total_steps, double warmup_proportion);

    // Clips accumulated grads, applies one update, zeroes grads.
    // Returns the pre-clip global gradient norm.
    double step();
    int steps_taken() const { return t_; }
    double current_lr() const;

  private:
    struct Slot {
        Tensor param;
        bool decay;
        std::vector<double> m, v;
    };
    std::vector<Slot> slots_;
    double lr_, weight_decay_, clip_;
    int total_steps_;
    double warmup_proportion_;
    int t_ = 0;
    static constexpr double kBeta1 = 0.9;
    static constexpr double kBeta2 = 0.999;
    static constexpr double kEps = 1e-8;
};

// Masked-LM pretraining of the full-structure model. Records the held-out
// loss before and after; throws NumericError (with the trace attached to the
// message) on divergence.
TrainingTrace pretrain_teacher(ElasticModel& model, const std::string& corpus, const DistillConfig& cfg);

// Sum over relation heads of row-averaged KL between teacher and student
// query/key/value relations. Teacher relations must be detached.
Tensor align_loss(const RelationTriple& teacher, const RelationTriple& student);

// Traverse every sub-structure on one token batch and accumulate the scaled
// relation-alignment gradients into the student's parameters (no update).
// Returns the unscaled per-level losses; sets *finite=false on NaN/inf.
std::map<int, double> accumulate_elastic_gradients(const ElasticModel& teacher, ElasticModel& student,
                                                   const std::vector<std::vector<int>>& batch_tokens,
                                                   LossScaling scaling, bool* finite = nullptr);

// One elastic optimization step over a token batch: gradient accumulation
// followed by a single optimizer update. Returns per-level losses for the
// step; a non-finite loss skips the update and flags *skipped.
std::map<int, double> elastic_step(const ElasticModel& teacher, ElasticModel& student,
                                   const std::vector<std::vector<int>>& batch_tokens, AdamW& optimizer,
                                   LossScaling scaling, bool* skipped = nullptr);

// Task-agnostic relation distillation across all sub-structures.
TrainingTrace distill(const ElasticModel& teacher, ElasticModel& student, const std::string& corpus,
                      const DistillConfig& cfg);

// Task loss evaluated for one sub-structure level on one batch of opaque
// example indices; the callable owns the data and the forward recipe.
using TaskLoss = std::function<Tensor(const ElasticModel& model, const SubStructure& s,
                                      std::span<const int> example_indices)>;

// Elastic task-specific finetuning: same traversal discipline as distill
// with the task objective substituted.
TrainingTrace finetune(ElasticModel& student, const TaskLoss& loss_fn, int n_examples,
                       const DistillConfig& cfg);

// Held-out relation-alignment loss per level.
std::map<int, double> heldout_align_loss(const ElasticModel& teacher, const ElasticModel& student,
                                         const std::vector<std::vector<int>>& heldout_tokens);

}  // namespace elm
