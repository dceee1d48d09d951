#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "elm/model.hpp"
#include "elm/scheduler.hpp"

namespace elm {

struct WorkloadSpec {
    double duration_s = 120.0;
    double ramp_s = 50.0;
    int peak_concurrency = 100;
    double pause_min_s = 1.0;
    double pause_max_s = 3.0;
    std::uint64_t seed = 1;
    int query_pool = 64;

    void validate() const;
    // Clients activated by time t under the linear ramp.
    int active_clients_at(double t) const;
};

struct Arrival {
    double time_s = 0.0;
    int client_id = 0;
    int request_id = 0;
    int query_id = 0;
};

// Open-loop schedule: client i activates at i * ramp / peak and then emits
// requests separated by uniform pauses, independent of completions.
std::vector<Arrival> generate_workload(const WorkloadSpec& spec);

struct RequestEvent {
    int request_id = 0;
    int client_id = 0;
    double arrival_ms = 0.0;
    double dequeue_ms = 0.0;
    double completion_ms = 0.0;
    int level = 0;
    int queue_at_decision = 0;

    double latency_ms() const { return completion_ms - arrival_ms; }
    double queuing_ms() const { return dequeue_ms - arrival_ms; }
    double processing_ms() const { return completion_ms - dequeue_ms; }
};

enum class QueueCounting {
    kWithService,  // queue length at pop, counting the request entering service
    kWaitingOnly,  // requests left waiting behind it
};

struct SimOptions {
    double constraint_ms = 500.0;
    // 0 = elastic scheduling; otherwise every request is served at this level.
    int pinned_level = 0;
    QueueCounting counting = QueueCounting::kWithService;
    std::size_t safety_cap = 100000;  // wall-clock queue bound
};

// Deterministic single-server FIFO simulation; service time of a request is
// the t_p of the level chosen at its dequeue.
std::vector<RequestEvent> run_discrete_event(const std::vector<Arrival>& arrivals,
                                             const LatencyProfile& profile, const SimOptions& opt);

// Same regime with real sliced-mode query encoding on a server thread and
// one producer thread per client. Returns a partial trace if the safety cap
// aborts the run (`aborted` reports it).
std::vector<RequestEvent> run_wall_clock(const ElasticModel& model, const LatencyProfile& profile,
                                         const WorkloadSpec& spec,
                                         const std::vector<std::string>& queries, const SimOptions& opt,
                                         bool* aborted = nullptr);

struct ReportBucket {
    double bucket_start_s = 0.0;
    int concurrency = 0;
    double mean_latency_ms = 0.0;
    double p95_latency_ms = 0.0;
    double violation_rate = 0.0;
    int level_mode = 0;
    double mean_perf_proxy = 0.0;
    int request_count = 0;
};

struct TradeoffReport {
    std::vector<ReportBucket> buckets;  // covers [0, duration) with no gaps
    double bucket_s = 5.0;
};

// Events are attributed to buckets by arrival time. Empty buckets report
// zeros. Proxies come from the profile.
TradeoffReport report(const std::vector<RequestEvent>& events, const WorkloadSpec& spec,
                      double constraint_ms, const LatencyProfile& profile, double bucket_s = 5.0);

// Aggregates used by the qualitative comparisons.
double violation_rate_in(const std::vector<RequestEvent>& events, double from_ms, double to_ms,
                         double constraint_ms);
double mean_proxy_in(const std::vector<RequestEvent>& events, double from_ms, double to_ms,
                     const LatencyProfile& profile);

std::string events_to_csv(const std::vector<RequestEvent>& events);
std::vector<RequestEvent> events_from_csv(const std::string& csv);
std::string report_to_csv(const TradeoffReport& report);
TradeoffReport report_from_csv(const std::string& csv);

}  // namespace elm
