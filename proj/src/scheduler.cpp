#include "elm/scheduler.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "elm/corpus.hpp"
#include "elm/errors.hpp"

namespace elm {

const LevelTiming& LatencyProfile::at_level(int level) const {
    for (const auto& lt : levels) {
        if (lt.level == level) return lt;
    }
    throw StructureError("profile has no level " + std::to_string(level));
}

bool LatencyProfile::has_level(int level) const {
    for (const auto& lt : levels) {
        if (lt.level == level) return true;
    }
    return false;
}

std::string LatencyProfile::to_text() const {
    std::ostringstream os;
    os << "# latency profile v1\n";
    os << "# level t_p_ms proxy trials\n";
    os.precision(17);
    for (const auto& lt : levels) {
        os << lt.level << ' ' << lt.t_p_ms << ' ' << lt.proxy << ' ' << lt.trials << '\n';
    }
    for (const auto& w : warnings) os << "# warning: " << w << '\n';
    return os.str();
}

LatencyProfile LatencyProfile::from_text(const std::string& text) {
    LatencyProfile p;
    std::istringstream is(text);
    std::string line;
    bool versioned = false;
    while (std::getline(is, line)) {
        if (line.rfind("# latency profile v1", 0) == 0) {
            versioned = true;
            continue;
        }
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        LevelTiming lt;
        if (!(ls >> lt.level >> lt.t_p_ms >> lt.proxy >> lt.trials)) {
            throw IoError("malformed latency profile line: " + line);
        }
        p.levels.push_back(lt);
    }
    if (!versioned) throw IoError("latency profile missing version header");
    if (p.levels.empty()) throw IoError("latency profile has no levels");
    return p;
}

LatencyProfile calibrate(const ElasticModel& model, int trials, int input_length) {
    if (trials < 5) throw ContractError("calibrate: need at least 5 trials");
    if (input_length < 2 || input_length > model.config().max_seq_len) {
        throw ContractError("calibrate: input_length out of range");
    }
    using Clock = std::chrono::steady_clock;
    const int warmup = 3;
    const int filler = std::min(65, model.config().vocab_size - 1);
    std::vector<int> tokens(static_cast<std::size_t>(input_length), filler);
    tokens[0] = tok::kCls;
    LatencyProfile profile;
    NoGradScope ng;
    ForwardOptions opt;  // sliced
    for (const auto& s : model.submap().entries) {
        std::vector<double> times;
        times.reserve(static_cast<std::size_t>(trials));
        for (int t = 0; t < warmup + trials; ++t) {
            const auto t0 = Clock::now();
            (void)model.forward(tokens, s, opt);
            const double ms = std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
            if (t >= warmup) times.push_back(ms);
        }
        std::sort(times.begin(), times.end());
        const double median = times[times.size() / 2];
        if (median <= 0.0) {
            throw NumericError("calibrate: timer resolution too coarse; use a larger input length");
        }
        profile.levels.push_back({s.level_label, median, 0.0, trials});
    }
    // Calibration noise can invert the monotone ordering; flag, never reorder.
    for (std::size_t i = 1; i < profile.levels.size(); ++i) {
        if (profile.levels[i].t_p_ms > profile.levels[i - 1].t_p_ms) {
            profile.warnings.push_back("t_p ordering inverted between levels " +
                                       std::to_string(profile.levels[i - 1].level) + " and " +
                                       std::to_string(profile.levels[i].level));
        }
    }
    return profile;
}

void attach_proxies(LatencyProfile& profile, const std::map<int, double>& proxy_by_level) {
    for (auto& lt : profile.levels) {
        auto it = proxy_by_level.find(lt.level);
        if (it == proxy_by_level.end()) {
            throw ContractError("attach_proxies: no proxy for level " + std::to_string(lt.level));
        }
        lt.proxy = it->second;
    }
}

long long max_queue(double t_p_ms, double constraint_ms) {
    if (t_p_ms <= 0.0 || constraint_ms <= 0.0) throw ContractError("max_queue: times must be positive");
    return static_cast<long long>(std::floor(constraint_ms / t_p_ms - 1.0));
}

ScheduleDecision decide(int queue_size, double constraint_ms, const LatencyProfile& profile) {
    if (profile.levels.empty()) throw ContractError("decide: empty profile");
    if (queue_size < 0) throw ContractError("decide: negative queue size");
    ScheduleDecision d;
    d.queue_size = queue_size;
    d.constraint_ms = constraint_ms;

    const LevelTiming* best = nullptr;
    for (const auto& lt : profile.levels) {
        const double est = (queue_size + 1) * lt.t_p_ms;
        if (est > constraint_ms) continue;
        if (best == nullptr || lt.proxy > best->proxy ||
            (lt.proxy == best->proxy && lt.level > best->level)) {
            best = &lt;
        }
    }
    if (best != nullptr) {
        d.level = best->level;
        d.estimated_latency_ms = (queue_size + 1) * best->t_p_ms;
        d.feasible = true;
        return d;
    }
    // Nothing fits: fall back to the fastest level and flag the violation.
    const LevelTiming* fastest = &profile.levels.front();
    for (const auto& lt : profile.levels) {
        if (lt.t_p_ms < fastest->t_p_ms ||
            (lt.t_p_ms == fastest->t_p_ms && lt.level > fastest->level)) {
            fastest = &lt;
        }
    }
    d.level = fastest->level;
    d.estimated_latency_ms = (queue_size + 1) * fastest->t_p_ms;
    d.feasible = false;
    return d;
}

}  // namespace elm
