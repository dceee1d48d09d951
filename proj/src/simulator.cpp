#include "elm/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include "elm/corpus.hpp"
#include "elm/errors.hpp"
#include "elm/retrieval.hpp"
#include "elm/rng.hpp"

namespace elm {

void WorkloadSpec::validate() const {
    if (duration_s <= 0.0) throw ConfigError("duration must be positive");
    if (ramp_s < 0.0 || ramp_s > duration_s) throw ConfigError("ramp must lie within the duration");
    if (peak_concurrency < 0) throw ConfigError("peak concurrency must be >= 0");
    if (pause_min_s < 0.0 || pause_min_s > pause_max_s) throw ConfigError("pause range is inverted");
    if (query_pool < 1) throw ConfigError("query pool must be >= 1");
}

int WorkloadSpec::active_clients_at(double t) const {
    if (t < 0.0) return 0;
    if (peak_concurrency == 0) return 0;
    if (ramp_s <= 0.0) return peak_concurrency;
    const int n = static_cast<int>(std::floor(t * peak_concurrency / ramp_s)) + 1;
    return std::min(peak_concurrency, n);
}

std::vector<Arrival> generate_workload(const WorkloadSpec& spec) {
    spec.validate();
    Rng base(spec.seed);
    std::vector<Arrival> arrivals;
    for (int c = 0; c < spec.peak_concurrency; ++c) {
        Rng rng = base.fork(static_cast<std::uint64_t>(c));
        double t = (spec.peak_concurrency > 0 && spec.ramp_s > 0.0)
                       ? static_cast<double>(c) * spec.ramp_s / spec.peak_concurrency
                       : 0.0;
        while (t < spec.duration_s) {
            Arrival a;
            a.time_s = t;
            a.client_id = c;
            a.query_id = rng.below_int(spec.query_pool);
            arrivals.push_back(a);
            t += rng.uniform(spec.pause_min_s, spec.pause_max_s);
        }
    }
    std::stable_sort(arrivals.begin(), arrivals.end(), [](const Arrival& a, const Arrival& b) {
        if (a.time_s != b.time_s) return a.time_s < b.time_s;
        return a.client_id < b.client_id;
    });
    for (std::size_t i = 0; i < arrivals.size(); ++i) arrivals[i].request_id = static_cast<int>(i);
    return arrivals;
}

namespace {

int decide_level(const LatencyProfile& profile, const SimOptions& opt, int g, double* t_p,
                 int* observed) {
    *observed = g;
    if (opt.pinned_level != 0) {
        *t_p = profile.at_level(opt.pinned_level).t_p_ms;
        return opt.pinned_level;
    }
    ScheduleDecision d = decide(g, opt.constraint_ms, profile);
    *t_p = profile.at_level(d.level).t_p_ms;
    return d.level;
}

}  // namespace

std::vector<RequestEvent> run_discrete_event(const std::vector<Arrival>& arrivals,
                                             const LatencyProfile& profile, const SimOptions& opt) {
    for (const auto& lt : profile.levels) {
        if (lt.t_p_ms <= 0.0) throw ContractError("run_discrete_event: non-positive t_p in profile");
    }
    std::vector<RequestEvent> events(arrivals.size());
    std::deque<std::size_t> queue;
    std::size_t next_arrival = 0;
    bool busy = false;
    std::size_t in_service = 0;
    double completion_at = 0.0;

    auto start_service = [&](std::size_t idx, double now) {
        // Queue length at the pop, including the request entering service.
        int g = static_cast<int>(queue.size()) + 1;
        if (opt.counting == QueueCounting::kWaitingOnly) g -= 1;
        double t_p = 0.0;
        int observed = 0;
        const int level = decide_level(profile, opt, g, &t_p, &observed);
        RequestEvent& ev = events[idx];
        ev.request_id = arrivals[idx].request_id;
        ev.client_id = arrivals[idx].client_id;
        ev.arrival_ms = arrivals[idx].time_s * 1000.0;
        ev.dequeue_ms = now;
        ev.completion_ms = now + t_p;
        ev.level = level;
        ev.queue_at_decision = observed;
        busy = true;
        in_service = idx;
        completion_at = ev.completion_ms;
    };

    while (next_arrival < arrivals.size() || !queue.empty() || busy) {
        const double arrival_t =
            next_arrival < arrivals.size() ? arrivals[next_arrival].time_s * 1000.0 : 1e300;
        const double completion_t = busy ? completion_at : 1e300;
        if (busy && completion_t <= arrival_t) {
            // completions first on ties
            busy = false;
            (void)in_service;
            if (!queue.empty()) {
                const std::size_t idx = queue.front();
                queue.pop_front();
                start_service(idx, completion_t);
            }
        } else if (next_arrival < arrivals.size()) {
            const std::size_t idx = next_arrival++;
            if (!busy && queue.empty()) {
                start_service(idx, arrival_t);
            } else {
                queue.push_back(idx);
            }
        }
    }
    return events;
}

namespace {

struct BlockingQueue {
    std::mutex m;
    std::condition_variable cv;
    std::deque<std::pair<int, double>> q;  // (arrival index, arrival_ms)
    bool closed = false;
    std::size_t high_water = 0;

    void push(int idx, double arrival_ms) {
        {
            std::lock_guard<std::mutex> lk(m);
            q.emplace_back(idx, arrival_ms);
            high_water = std::max(high_water, q.size());
        }
        cv.notify_one();
    }
    // Returns queue length at pop including the popped element; -1 when done.
    int pop(int* idx, double* arrival_ms) {
        std::unique_lock<std::mutex> lk(m);
        cv.wait(lk, [&] { return !q.empty() || closed; });
        if (q.empty()) return -1;
        const int size_at_pop = static_cast<int>(q.size());
        *idx = q.front().first;
        *arrival_ms = q.front().second;
        q.pop_front();
        return size_at_pop;
    }
    void close() {
        {
            std::lock_guard<std::mutex> lk(m);
            closed = true;
        }
        cv.notify_all();
    }
    std::size_t size() {
        std::lock_guard<std::mutex> lk(m);
        return q.size();
    }
};

}  // namespace

std::vector<RequestEvent> run_wall_clock(const ElasticModel& model, const LatencyProfile& profile,
                                         const WorkloadSpec& spec,
                                         const std::vector<std::string>& queries, const SimOptions& opt,
                                         bool* aborted) {
    spec.validate();
    if (queries.empty()) throw ContractError("run_wall_clock: no queries");
    if (aborted) *aborted = false;
    using Clock = std::chrono::steady_clock;
    const auto t0 = Clock::now();
    auto now_ms = [&]() { return std::chrono::duration<double, std::milli>(Clock::now() - t0).count(); };

    const auto arrivals = generate_workload(spec);
    BlockingQueue queue;
    std::vector<RequestEvent> events;
    std::mutex events_m;
    bool abort_flag = false;

    std::exception_ptr server_error;
    std::thread server([&] {
      try {
        const int query_len = std::min(model.config().max_seq_len, 32);
        while (true) {
            int idx = -1;
            double arrival_ms = 0.0;
            const int at_pop = queue.pop(&idx, &arrival_ms);
            if (at_pop < 0) break;
            int g = at_pop;
            if (opt.counting == QueueCounting::kWaitingOnly) g -= 1;
            double t_p = 0.0;
            int observed = 0;
            const int level = decide_level(profile, opt, g, &t_p, &observed);
            RequestEvent ev;
            ev.request_id = arrivals[static_cast<std::size_t>(idx)].request_id;
            ev.client_id = arrivals[static_cast<std::size_t>(idx)].client_id;
            ev.arrival_ms = arrival_ms;
            ev.dequeue_ms = now_ms();
            const int query_id = arrivals[static_cast<std::size_t>(idx)].query_id;
            (void)encode_query(model, queries[static_cast<std::size_t>(query_id) % queries.size()],
                               level, query_len);
            ev.completion_ms = now_ms();
            ev.level = level;
            ev.queue_at_decision = observed;
            std::lock_guard<std::mutex> lk(events_m);
            events.push_back(ev);
        }
      } catch (...) {
        server_error = std::current_exception();
      }
    });

    std::vector<std::thread> clients;
    clients.reserve(static_cast<std::size_t>(spec.peak_concurrency));
    std::atomic<bool> stop{false};
    // Each client replays its own slice of the precomputed schedule.
    for (int c = 0; c < spec.peak_concurrency; ++c) {
        clients.emplace_back([&, c] {
            for (std::size_t i = 0; i < arrivals.size(); ++i) {
                if (arrivals[i].client_id != c) continue;
                if (stop.load()) return;
                const double target = arrivals[i].time_s * 1000.0;
                const double lead = target - now_ms();
                if (lead > 0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(lead));
                if (stop.load()) return;
                if (queue.size() >= opt.safety_cap) {
                    abort_flag = true;
                    stop.store(true);
                    return;
                }
                queue.push(static_cast<int>(i), now_ms());
            }
        });
    }
    for (auto& c : clients) c.join();
    queue.close();
    server.join();
    if (server_error) std::rethrow_exception(server_error);
    if (aborted) *aborted = abort_flag;
    std::sort(events.begin(), events.end(),
              [](const RequestEvent& a, const RequestEvent& b) { return a.request_id < b.request_id; });
    return events;
}

TradeoffReport report(const std::vector<RequestEvent>& events, const WorkloadSpec& spec,
                      double constraint_ms, const LatencyProfile& profile, double bucket_s) {
    if (bucket_s <= 0.0) throw ContractError("report: bucket size must be positive");
    TradeoffReport rep;
    rep.bucket_s = bucket_s;
    const int n_buckets = std::max(1, static_cast<int>(std::ceil(spec.duration_s / bucket_s)));
    std::vector<std::vector<const RequestEvent*>> grouped(static_cast<std::size_t>(n_buckets));
    for (const auto& ev : events) {
        int b = static_cast<int>(ev.arrival_ms / 1000.0 / bucket_s);
        if (b < 0) b = 0;
        if (b >= n_buckets) b = n_buckets - 1;
        grouped[static_cast<std::size_t>(b)].push_back(&ev);
    }
    for (int b = 0; b < n_buckets; ++b) {
        ReportBucket rb;
        rb.bucket_start_s = b * bucket_s;
        rb.concurrency = spec.active_clients_at(rb.bucket_start_s);
        const auto& evs = grouped[static_cast<std::size_t>(b)];
        rb.request_count = static_cast<int>(evs.size());
        if (!evs.empty()) {
            std::vector<double> lat;
            lat.reserve(evs.size());
            std::map<int, int> level_counts;
            double proxy_sum = 0.0;
            int violations = 0;
            for (const auto* ev : evs) {
                lat.push_back(ev->latency_ms());
                if (ev->latency_ms() > constraint_ms) ++violations;
                level_counts[ev->level] += 1;
                proxy_sum += profile.at_level(ev->level).proxy;
            }
            std::sort(lat.begin(), lat.end());
            double mean = 0.0;
            for (double v : lat) mean += v;
            rb.mean_latency_ms = mean / static_cast<double>(lat.size());
            // nearest-rank p95
            const std::size_t r = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(lat.size())));
            rb.p95_latency_ms = lat[std::min(lat.size() - 1, r == 0 ? 0 : r - 1)];
            rb.violation_rate = static_cast<double>(violations) / static_cast<double>(lat.size());
            int best_count = -1;
            for (const auto& [level, count] : level_counts) {
                if (count > best_count || (count == best_count && level > rb.level_mode)) {
                    best_count = count;
                    rb.level_mode = level;
                }
            }
            rb.mean_perf_proxy = proxy_sum / static_cast<double>(evs.size());
        }
        rep.buckets.push_back(rb);
    }
    return rep;
}

double violation_rate_in(const std::vector<RequestEvent>& events, double from_ms, double to_ms,
                         double constraint_ms) {
    int total = 0, violations = 0;
    for (const auto& ev : events) {
        if (ev.arrival_ms < from_ms || ev.arrival_ms >= to_ms) continue;
        ++total;
        if (ev.latency_ms() > constraint_ms) ++violations;
    }
    return total == 0 ? 0.0 : static_cast<double>(violations) / total;
}

double mean_proxy_in(const std::vector<RequestEvent>& events, double from_ms, double to_ms,
                     const LatencyProfile& profile) {
    int total = 0;
    double acc = 0.0;
    for (const auto& ev : events) {
        if (ev.arrival_ms < from_ms || ev.arrival_ms >= to_ms) continue;
        ++total;
        acc += profile.at_level(ev.level).proxy;
    }
    return total == 0 ? 0.0 : acc / total;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace

std::string events_to_csv(const std::vector<RequestEvent>& events) {
    std::ostringstream os;
    os << "request_id,client_id,arrival_ms,dequeue_ms,completion_ms,level,queue_at_decision\n";
    for (const auto& e : events) {
        os << e.request_id << ',' << e.client_id << ',' << fmt(e.arrival_ms) << ',' << fmt(e.dequeue_ms)
           << ',' << fmt(e.completion_ms) << ',' << e.level << ',' << e.queue_at_decision << '\n';
    }
    return os.str();
}

std::vector<RequestEvent> events_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line.rfind("request_id,", 0) != 0) {
        throw IoError("events csv: missing header");
    }
    std::vector<RequestEvent> out;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 7) throw IoError("events csv: malformed row");
        RequestEvent e;
        e.request_id = std::stoi(f[0]);
        e.client_id = std::stoi(f[1]);
        e.arrival_ms = std::stod(f[2]);
        e.dequeue_ms = std::stod(f[3]);
        e.completion_ms = std::stod(f[4]);
        e.level = std::stoi(f[5]);
        e.queue_at_decision = std::stoi(f[6]);
        out.push_back(e);
    }
    return out;
}

std::string report_to_csv(const TradeoffReport& report) {
    std::ostringstream os;
    os << "bucket_start_s,concurrency,mean_latency_ms,p95_latency_ms,violation_rate,level_mode,mean_perf_proxy\n";
    for (const auto& b : report.buckets) {
        os << fmt(b.bucket_start_s) << ',' << b.concurrency << ',' << fmt(b.mean_latency_ms) << ','
           << fmt(b.p95_latency_ms) << ',' << fmt(b.violation_rate) << ',' << b.level_mode << ','
           << fmt(b.mean_perf_proxy) << '\n';
    }
    return os.str();
}

TradeoffReport report_from_csv(const std::string& csv) {
    std::istringstream is(csv);
    std::string line;
    if (!std::getline(is, line) || line.rfind("bucket_start_s,", 0) != 0) {
        throw IoError("report csv: missing header");
    }
    TradeoffReport rep;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = split_csv_line(line);
        if (f.size() != 7) throw IoError("report csv: malformed row");
        ReportBucket b;
        b.bucket_start_s = std::stod(f[0]);
        b.concurrency = std::stoi(f[1]);
        b.mean_latency_ms = std::stod(f[2]);
        b.p95_latency_ms = std::stod(f[3]);
        b.violation_rate = std::stod(f[4]);
        b.level_mode = std::stoi(f[5]);
        b.mean_perf_proxy = std::stod(f[6]);
        rep.buckets.push_back(b);
    }
    if (rep.buckets.size() >= 2) rep.bucket_s = rep.buckets[1].bucket_start_s - rep.buckets[0].bucket_start_s;
    return rep;
}

}  // namespace elm
