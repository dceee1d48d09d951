#include "elm/distill.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elm/errors.hpp"

namespace elm {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

bool is_no_decay_param(const std::string& name) {
    return name.find("_b") != std::string::npos || name.find("bias") != std::string::npos ||
           name.find("gain") != std::string::npos || name.find(".bq") != std::string::npos ||
           name.find(".bk") != std::string::npos || name.find(".bv") != std::string::npos ||
           name.find(".bo") != std::string::npos;
}

}  // namespace

void DistillConfig::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be positive");
    if (warmup_proportion < 0.0 || warmup_proportion >= 1.0) throw ConfigError("warmup_proportion must be in [0,1)");
    if (grad_clip <= 0.0) throw ConfigError("grad_clip must be positive");
    if (epochs < 0 || max_steps < 0) throw ConfigError("epochs and max_steps must be non-negative");
    if (seq_len < 2) throw ConfigError("seq_len must be >= 2");
}

std::string TrainingTrace::to_jsonl() const {
    std::ostringstream os;
    for (const auto& r : rows) {
        nlohmann::json j{{"step", r.step}, {"level", r.level}, {"loss", r.loss},
                         {"grad_norm", r.grad_norm}, {"millis", r.millis}};
        os << j.dump() << '\n';
    }
    return os.str();
}

AdamW::AdamW(std::vector<std::pair<std::string, Tensor>> params, double lr, double weight_decay,
             double clip, int total_steps, double warmup_proportion)
    : lr_(lr), weight_decay_(weight_decay), clip_(clip), total_steps_(std::max(total_steps, 1)),
      warmup_proportion_(warmup_proportion) {
    for (auto& [name, t] : params) {
        Slot s;
        s.param = t;
        s.decay = !is_no_decay_param(name);
        s.m.assign(t.numel(), 0.0);
        s.v.assign(t.numel(), 0.0);
        slots_.push_back(std::move(s));
    }
}

double AdamW::current_lr() const {
    const int warmup = std::max(1, static_cast<int>(warmup_proportion_ * total_steps_));
    const int t = t_ + 1;
    if (t <= warmup) return lr_ * t / warmup;
    const double frac = static_cast<double>(total_steps_ - t) / std::max(1, total_steps_ - warmup);
    return lr_ * std::max(0.0, frac);
}

double AdamW::step() {
    double norm2 = 0.0;
    for (auto& s : slots_) {
        if (!s.param.has_grad()) continue;
        for (double g : s.param.grad()) norm2 += g * g;
    }
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw NumericError("gradient norm is not finite");
    const double shrink = (norm > clip_) ? clip_ / norm : 1.0;
    const double lr = current_lr();
    ++t_;
    const double bc1 = 1.0 - std::pow(kBeta1, t_);
    const double bc2 = 1.0 - std::pow(kBeta2, t_);
    for (auto& s : slots_) {
        auto& p = s.param.data();
        auto& g = s.param.grad();
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = g[i] * shrink;
            s.m[i] = kBeta1 * s.m[i] + (1.0 - kBeta1) * gi;
            s.v[i] = kBeta2 * s.v[i] + (1.0 - kBeta2) * gi * gi;
            const double mhat = s.m[i] / bc1;
            const double vhat = s.v[i] / bc2;
            p[i] -= lr * (mhat / (std::sqrt(vhat) + kEps) + (s.decay ? weight_decay_ * p[i] : 0.0));
        }
        s.param.zero_grad();
    }
    return norm;
}

TrainingTrace pretrain_teacher(ElasticModel& model, const std::string& corpus, const DistillConfig& cfg) {
    cfg.validate();
    MlmSampler sampler(corpus, cfg.seq_len, cfg.mask_rate, cfg.seed);
    const auto heldout = sampler.heldout(cfg.heldout_windows);
    const SubStructure full = model.submap().largest();

    auto heldout_loss = [&]() {
        NoGradScope ng;
        ForwardOptions opt;
        opt.want_mlm = true;
        double acc = 0.0;
        for (const auto& ex : heldout) {
            ForwardResult r = model.forward(ex.tokens, full, opt);
            acc += cross_entropy(r.mlm_logits, ex.targets).item();
        }
        return acc / static_cast<double>(heldout.size());
    };

    TrainingTrace trace;
    trace.heldout_before_pretrain = heldout_loss();

    const int windows = static_cast<int>(corpus.size()) / cfg.seq_len;
    int steps = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * std::max(1, windows / cfg.batch_size);
    AdamW opt(model.named_parameters(), cfg.learning_rate, cfg.weight_decay, cfg.grad_clip, steps,
              cfg.warmup_proportion);
    ForwardOptions fwd;
    fwd.want_mlm = true;

    for (int step = 0; step < steps; ++step) {
        const auto t0 = Clock::now();
        Tape tape;
        TapeScope scope(tape);
        Tensor loss;
        for (int b = 0; b < cfg.batch_size; ++b) {
            MlmExample ex = sampler.next();
            ForwardResult r = model.forward(ex.tokens, full, fwd);
            Tensor l = cross_entropy(r.mlm_logits, ex.targets);
            loss = loss.defined() ? add(loss, l) : l;
        }
        loss = scale(loss, 1.0 / cfg.batch_size);
        const double loss_v = loss.item();
        if (!std::isfinite(loss_v)) {
            throw NumericError("pretraining diverged at step " + std::to_string(step));
        }
        tape.backward(loss);
        const double gnorm = opt.step();
        trace.rows.push_back({step, full.level_label, loss_v, gnorm, ms_since(t0)});
    }
    trace.heldout_after_pretrain = heldout_loss();
    return trace;
}

Tensor align_loss(const RelationTriple& teacher, const RelationTriple& student) {
    if (teacher.query.size() != student.query.size() || teacher.key.size() != student.key.size() ||
        teacher.value.size() != student.value.size()) {
        throw ContractError("align_loss: relation head counts disagree");
    }
    for (const auto* side : {&teacher.query, &teacher.key, &teacher.value}) {
        for (const auto& t : *side) {
            if (t.requires_grad()) throw ContractError("align_loss: teacher relations must be detached");
        }
    }
    Tensor total;
    for (std::size_t r = 0; r < teacher.query.size(); ++r) {
        Tensor l = kl_div(teacher.query[r], student.query[r]);
        l = add(l, kl_div(teacher.key[r], student.key[r]));
        l = add(l, kl_div(teacher.value[r], student.value[r]));
        total = total.defined() ? add(total, l) : l;
    }
    return total;
}

namespace {

Tensor structure_align_loss(const ElasticModel& student,
                            const std::vector<std::vector<int>>& batch_tokens, const SubStructure& s,
                            const std::vector<RelationTriple>& teacher_rel) {
    Tensor loss;
    ForwardOptions opt;  // sliced
    for (std::size_t b = 0; b < batch_tokens.size(); ++b) {
        ForwardResult r = student.forward(batch_tokens[b], s, opt);
        RelationTriple sr = student.relations_from_block(r.hiddens);
        Tensor l = align_loss(teacher_rel[b], sr);
        loss = loss.defined() ? add(loss, l) : l;
    }
    return scale(loss, 1.0 / static_cast<double>(batch_tokens.size()));
}

std::vector<RelationTriple> batch_teacher_relations(const ElasticModel& teacher,
                                                    const std::vector<std::vector<int>>& batch_tokens) {
    std::vector<RelationTriple> out;
    out.reserve(batch_tokens.size());
    const SubStructure& tfull = teacher.submap().largest();
    for (const auto& toks : batch_tokens) out.push_back(teacher.teacher_relations(toks, tfull));
    return out;
}

}  // namespace

std::map<int, double> accumulate_elastic_gradients(const ElasticModel& teacher, ElasticModel& student,
                                                   const std::vector<std::vector<int>>& batch_tokens,
                                                   LossScaling scaling, bool* finite) {
    if (batch_tokens.empty()) throw ContractError("accumulate_elastic_gradients: empty batch");
    if (finite) *finite = true;
    const auto teacher_rel = batch_teacher_relations(teacher, batch_tokens);
    const auto& entries = student.submap().entries;
    const double denom = (scaling == LossScaling::kAverageOverStructures)
                             ? static_cast<double>(entries.size())
                             : 1.0;
    std::map<int, double> losses;
    for (const auto& s : entries) {
        Tape tape;
        TapeScope scope(tape);
        Tensor loss = structure_align_loss(student, batch_tokens, s, teacher_rel);
        loss = scale(loss, 1.0 / denom);
        const double v = loss.item();
        losses[s.level_label] = v * denom;  // report the unscaled per-structure loss
        if (!std::isfinite(v)) {
            if (finite) *finite = false;
            return losses;
        }
        tape.backward(loss);
    }
    return losses;
}

std::map<int, double> elastic_step(const ElasticModel& teacher, ElasticModel& student,
                                   const std::vector<std::vector<int>>& batch_tokens, AdamW& optimizer,
                                   LossScaling scaling, bool* skipped) {
    bool finite = true;
    auto losses = accumulate_elastic_gradients(teacher, student, batch_tokens, scaling, &finite);
    if (!finite) {
        student.zero_grads();
        if (skipped) *skipped = true;
        return losses;
    }
    if (skipped) *skipped = false;
    optimizer.step();
    return losses;
}

std::map<int, double> heldout_align_loss(const ElasticModel& teacher, const ElasticModel& student,
                                         const std::vector<std::vector<int>>& heldout_tokens) {
    NoGradScope ng;
    const auto teacher_rel = batch_teacher_relations(teacher, heldout_tokens);
    std::map<int, double> out;
    for (const auto& s : student.submap().entries) {
        out[s.level_label] =
            structure_align_loss(student, heldout_tokens, s, teacher_rel).item();
    }
    return out;
}

TrainingTrace distill(const ElasticModel& teacher, ElasticModel& student, const std::string& corpus,
                      const DistillConfig& cfg) {
    cfg.validate();
    // Distillation reads raw windows; masking is an MLM concern.
    MlmSampler sampler(corpus, cfg.seq_len, 1e-9, cfg.seed);
    std::vector<std::vector<int>> heldout;
    for (const auto& ex : sampler.heldout(cfg.heldout_windows)) {
        std::vector<int> toks = ex.tokens;
        for (std::size_t i = 0; i < toks.size(); ++i) {
            if (ex.targets[i] >= 0) toks[i] = ex.targets[i];  // unmask
        }
        heldout.push_back(std::move(toks));
    }

    TrainingTrace trace;
    trace.initial_heldout = heldout_align_loss(teacher, student, heldout);

    const int windows = static_cast<int>(corpus.size()) / cfg.seq_len;
    int steps = cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * std::max(1, windows / cfg.batch_size);
    AdamW opt(student.named_parameters(), cfg.learning_rate, cfg.weight_decay, cfg.grad_clip, steps,
              cfg.warmup_proportion);

    for (int step = 0; step < steps; ++step) {
        const auto t0 = Clock::now();
        std::vector<std::vector<int>> batch;
        for (int b = 0; b < cfg.batch_size; ++b) {
            MlmExample ex = sampler.next();
            std::vector<int> toks = ex.tokens;
            for (std::size_t i = 0; i < toks.size(); ++i) {
                if (ex.targets[i] >= 0) toks[i] = ex.targets[i];
            }
            batch.push_back(std::move(toks));
        }
        bool skipped = false;
        auto losses = elastic_step(teacher, student, batch, opt, cfg.loss_scaling, &skipped);
        const double millis = ms_since(t0);
        for (const auto& [level, loss] : losses) {
            trace.rows.push_back({step, level, loss, skipped ? -1.0 : 0.0, millis});
        }
        if (skipped) continue;
    }
    trace.final_heldout = heldout_align_loss(teacher, student, heldout);
    return trace;
}

TrainingTrace finetune(ElasticModel& student, const TaskLoss& loss_fn, int n_examples,
                       const DistillConfig& cfg) {
    cfg.validate();
    if (n_examples < 1) throw ContractError("finetune: no examples");
    Rng rng(cfg.seed);
    const auto& entries = student.submap().entries;
    const double denom = (cfg.loss_scaling == LossScaling::kAverageOverStructures)
                             ? static_cast<double>(entries.size())
                             : 1.0;
    int steps = cfg.max_steps > 0 ? cfg.max_steps
                                  : cfg.epochs * std::max(1, n_examples / cfg.batch_size);
    AdamW opt(student.named_parameters(), cfg.learning_rate, cfg.weight_decay, cfg.grad_clip, steps,
              cfg.warmup_proportion);
    TrainingTrace trace;
    for (int step = 0; step < steps; ++step) {
        const auto t0 = Clock::now();
        std::vector<int> batch;
        for (int b = 0; b < cfg.batch_size; ++b) batch.push_back(rng.below_int(n_examples));
        bool skipped = false;
        std::map<int, double> losses;
        for (const auto& s : entries) {
            Tape tape;
            TapeScope scope(tape);
            Tensor loss = loss_fn(student, s, batch);
            loss = scale(loss, 1.0 / denom);
            const double v = loss.item();
            losses[s.level_label] = v * denom;
            if (!std::isfinite(v)) {
                skipped = true;
                break;
            }
            tape.backward(loss);
        }
        double gnorm = 0.0;
        if (skipped) {
            student.zero_grads();
        } else {
            gnorm = opt.step();
        }
        const double millis = ms_since(t0);
        for (const auto& [level, loss] : losses) {
            trace.rows.push_back({step, level, loss, gnorm, millis});
        }
    }
    return trace;
}

}  // namespace elm
