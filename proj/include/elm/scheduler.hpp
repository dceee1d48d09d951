#pragma once

#include <map>
#include <string>
#include <vector>

#include "elm/model.hpp"

namespace elm {

struct LevelTiming {
    int level = 0;
    double t_p_ms = 0.0;   // median processing time
    double proxy = 0.0;    // offline performance metric for this level
    int trials = 0;
};

struct LatencyProfile {
    std::vector<LevelTiming> levels;  // largest level first
    std::vector<std::string> warnings;

    const LevelTiming& at_level(int level) const;
    bool has_level(int level) const;
    std::string to_text() const;
    static LatencyProfile from_text(const std::string& text);
};

struct ScheduleDecision {
    int queue_size = 0;
    double constraint_ms = 0.0;
    int level = 0;
    double estimated_latency_ms = 0.0;  // (g+1) * t_p of the chosen level
    bool feasible = false;
};

// Median sliced-forward wall time per level. Proxies default to zero and can
// be attached afterwards with attach_proxies.
LatencyProfile calibrate(const ElasticModel& model, int trials, int input_length);
void attach_proxies(LatencyProfile& profile, const std::map<int, double>& proxy_by_level);

// floor(T / t_p - 1); negative means infeasible even with an empty queue.
long long max_queue(double t_p_ms, double constraint_ms);

// Among levels with (g+1)*t_p <= T, the one with the highest proxy (ties go
// to the larger level). If none fits, the smallest-t_p level with
// feasible=false.
ScheduleDecision decide(int queue_size, double constraint_ms, const LatencyProfile& profile);

}  // namespace elm
