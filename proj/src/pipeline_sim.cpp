#include "longhaul/pipeline_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <queue>
#include <set>
#include <sstream>

#include "longhaul/errors.hpp"
#include "longhaul/rng.hpp"
#include "longhaul/text.hpp"

namespace longhaul {

void ClusterSpec::validate() const {
    if (rollout_nodes < 1) throw Error(Errc::invalid_spec, "rollout_nodes must be >= 1");
    if (judge_workers < 1) throw Error(Errc::invalid_spec, "judge_workers must be >= 1");
    if (!(rollout_duration > 0)) throw Error(Errc::invalid_spec, "rollout_duration must be positive");
    if (judge_service_time < 0) throw Error(Errc::invalid_spec, "judge_service_time must be >= 0");
    if (judge_requests_per_rollout < 1)
        throw Error(Errc::invalid_spec, "judge_requests_per_rollout must be >= 1");
    if (task_duration < 0) throw Error(Errc::invalid_spec, "task_duration must be >= 0");
    if (eval_requests_per_iteration < 0)
        throw Error(Errc::invalid_spec, "eval_requests_per_iteration must be >= 0");
    if (judge_failure_prob < 0 || judge_failure_prob >= 1)
        throw Error(Errc::invalid_spec, "judge_failure_prob must lie in [0, 1)");
}

const char* sim_event_kind_name(SimEventKind k) {
    switch (k) {
        case SimEventKind::rollout_start: return "rollout_start";
        case SimEventKind::rollout_end: return "rollout_end";
        case SimEventKind::judge_enqueue: return "judge_enqueue";
        case SimEventKind::judge_start: return "judge_start";
        case SimEventKind::judge_end: return "judge_end";
    }
    return "?";
}

const char* priority_class_name(PriorityClass c) {
    return c == PriorityClass::eval_set ? "eval" : "train";
}

namespace {

struct Arrival {
    double time = 0.0;
    PriorityClass cls = PriorityClass::train_set;
    int id = 0;
    int attempt = 0;
    double first_enqueue = 0.0;
};

struct ArrivalLater {
    bool operator()(const Arrival& a, const Arrival& b) const {
        if (a.time != b.time) return a.time > b.time;
        if (a.id != b.id) return a.id > b.id;
        return a.attempt > b.attempt;
    }
};

// eval_set first, then FIFO by enqueue time, then id
struct WaitBefore {
    bool operator()(const Arrival& a, const Arrival& b) const {
        if (a.cls != b.cls) return a.cls == PriorityClass::eval_set;
        if (a.time != b.time) return a.time < b.time;
        return a.id < b.id;
    }
};

struct InService {
    double end = 0.0;
    int worker = 0;
    Arrival req;
};

struct ServiceEndsLater {
    bool operator()(const InService& a, const InService& b) const {
        if (a.end != b.end) return a.end > b.end;
        return a.worker > b.worker;
    }
};

struct JudgeOutcome {
    double last_end = 0.0;
    int max_depth = 0;
    double eval_latency_sum = 0.0;
    int evals_completed = 0;
};

// Serves every arrival (plus failure retries) on `workers` identical
// workers, logging enqueue/start/end events. Depth and latency statistics
// only consider times <= horizon; service itself runs to completion.
JudgeOutcome run_judges(std::vector<Arrival> initial, const ClusterSpec& spec, double horizon,
                        std::uint64_t seed, std::vector<SimEvent>& log) {
    JudgeOutcome out;
    std::priority_queue<Arrival, std::vector<Arrival>, ArrivalLater> arrivals(
        ArrivalLater{}, std::move(initial));
    std::priority_queue<InService, std::vector<InService>, ServiceEndsLater> busy;
    std::set<Arrival, WaitBefore> waiting;
    std::set<int> idle;
    for (int w = 0; w < spec.judge_workers; ++w) idle.insert(w);

    while (!arrivals.empty() || !busy.empty()) {
        double t = std::numeric_limits<double>::infinity();
        if (!arrivals.empty()) t = std::min(t, arrivals.top().time);
        if (!busy.empty()) t = std::min(t, busy.top().end);

        // settle every cascade at instant t (zero service, retries)
        bool progressed = true;
        while (progressed) {
            progressed = false;
            while (!arrivals.empty() && arrivals.top().time <= t) {
                Arrival a = arrivals.top();
                arrivals.pop();
                log.push_back({t, SimEventKind::judge_enqueue, "q" + std::to_string(a.id), a.cls});
                waiting.insert(a);
                if (t <= horizon)
                    out.max_depth = std::max(out.max_depth, static_cast<int>(waiting.size()));
                progressed = true;
            }
            while (!busy.empty() && busy.top().end <= t) {
                InService s = busy.top();
                busy.pop();
                idle.insert(s.worker);
                log.push_back(
                    {s.end, SimEventKind::judge_end, "q" + std::to_string(s.req.id), s.req.cls});
                out.last_end = std::max(out.last_end, s.end);
                const double u = rng::uniform(
                    rng::derive(seed, 0xfa11, static_cast<std::uint64_t>(s.req.id)),
                    static_cast<std::uint64_t>(s.req.attempt));
                if (s.req.attempt == 0 && u < spec.judge_failure_prob) {
                    Arrival retry = s.req;
                    retry.attempt = 1;
                    retry.time = s.end;
                    arrivals.push(retry);
                } else if (s.req.cls == PriorityClass::eval_set && s.end <= horizon) {
                    out.eval_latency_sum += s.end - s.req.first_enqueue;
                    ++out.evals_completed;
                }
                progressed = true;
            }
            while (!idle.empty() && !waiting.empty()) {
                const int w = *idle.begin();
                Arrival a = *waiting.begin();
                waiting.erase(waiting.begin());
                idle.erase(idle.begin());
                log.push_back({t, SimEventKind::judge_start, "q" + std::to_string(a.id), a.cls});
                busy.push({t + spec.judge_service_time, w, a});
                progressed = true;
            }
        }
    }
    return out;
}

std::string node_rollout_id(int node, int rollout) {
    return "n" + std::to_string(node) + "r" + std::to_string(rollout);
}

SimResult simulate_synchronous(const ClusterSpec& spec, double horizon, std::uint64_t seed) {
    SimResult res;
    const int nodes = spec.rollout_nodes;
    double busy_node_time = 0.0;
    double eval_latency_sum = 0.0;
    int evals_completed = 0;
    int started = 0, finished = 0, next_id = 0;
    double t = 0.0;
    int cycle = 0;
    while (t < horizon) {
        for (int j = 0; j < nodes; ++j)
            res.events.push_back(
                {t, SimEventKind::rollout_start, node_rollout_id(j, cycle), PriorityClass::train_set});
        started += nodes;
        const double end = t + spec.rollout_duration;
        if (end > horizon) {
            busy_node_time += (horizon - t) * nodes;
            break;
        }
        busy_node_time += spec.rollout_duration * nodes;
        finished += nodes;
        ++res.metrics.iterations_completed;
        for (int j = 0; j < nodes; ++j)
            res.events.push_back(
                {end, SimEventKind::rollout_end, node_rollout_id(j, cycle), PriorityClass::train_set});

        std::vector<Arrival> arrivals;
        for (int j = 0; j < nodes; ++j)
            for (int r = 0; r < spec.judge_requests_per_rollout; ++r)
                arrivals.push_back({end, PriorityClass::train_set, next_id++, 0, end});
        for (int e = 0; e < spec.eval_requests_per_iteration; ++e)
            arrivals.push_back({end, PriorityClass::eval_set, next_id++, 0, end});
        const JudgeOutcome outcome = run_judges(std::move(arrivals), spec, horizon, seed,
                                                res.events);
        res.metrics.judge_queue_max_depth =
            std::max(res.metrics.judge_queue_max_depth, outcome.max_depth);
        eval_latency_sum += outcome.eval_latency_sum;
        evals_completed += outcome.evals_completed;
        t = std::max(end, outcome.last_end);
        ++cycle;
    }
    res.metrics.mean_eval_judge_latency =
        evals_completed > 0 ? eval_latency_sum / evals_completed : 0.0;
    res.metrics.carried_over_rollouts = started - finished;
    res.metrics.resume_events = 0;
    res.metrics.rollout_node_utilization = busy_node_time / (nodes * horizon);
    return res;
}

SimResult simulate_partial(const ClusterSpec& spec, double horizon, std::uint64_t seed) {
    SimResult res;
    const int nodes = spec.rollout_nodes;
    const double task = spec.effective_task_duration();
    int started = 0, finished = 0;

    struct Completion {
        double time;
        int node;
    };
    std::vector<Completion> completions;
    for (int j = 0; j < nodes; ++j) {
        for (int b = 0;; ++b) {
            const double start = b * task;
            if (start >= horizon) break;
            res.events.push_back({start, SimEventKind::rollout_start, node_rollout_id(j, b),
                                  PriorityClass::train_set});
            ++started;
            const double end = start + task;
            if (end <= horizon) {
                res.events.push_back({end, SimEventKind::rollout_end, node_rollout_id(j, b),
                                      PriorityClass::train_set});
                ++finished;
                completions.push_back({end, j});
            }
            // iteration boundaries strictly inside the rollout cut and resume it
            const double cut = std::min(end, horizon);
            const int k_lo = static_cast<int>(std::floor(start / spec.rollout_duration + 1e-9)) + 1;
            for (int k = k_lo; k * spec.rollout_duration < cut - 1e-12; ++k)
                ++res.metrics.resume_events;
        }
    }

    std::sort(completions.begin(), completions.end(), [](const Completion& a, const Completion& b) {
        if (a.time != b.time) return a.time < b.time;
        return a.node < b.node;
    });
    const int iterations = static_cast<int>(std::floor(horizon / spec.rollout_duration + 1e-9));
    res.metrics.iterations_completed = iterations;

    // interleave rollout-completion judging with per-boundary eval requests,
    // assigning request ids in chronological order
    std::vector<Arrival> arrivals;
    int next_id = 0;
    size_t ci = 0;
    for (int k = 1; k <= iterations; ++k) {
        const double boundary = k * spec.rollout_duration;
        while (ci < completions.size() && completions[ci].time <= boundary) {
            for (int r = 0; r < spec.judge_requests_per_rollout; ++r)
                arrivals.push_back(
                    {completions[ci].time, PriorityClass::train_set, next_id++, 0, completions[ci].time});
            ++ci;
        }
        for (int e = 0; e < spec.eval_requests_per_iteration; ++e)
            arrivals.push_back({boundary, PriorityClass::eval_set, next_id++, 0, boundary});
    }
    while (ci < completions.size()) {
        for (int r = 0; r < spec.judge_requests_per_rollout; ++r)
            arrivals.push_back(
                {completions[ci].time, PriorityClass::train_set, next_id++, 0, completions[ci].time});
        ++ci;
    }

    const JudgeOutcome outcome = run_judges(std::move(arrivals), spec, horizon, seed, res.events);
    res.metrics.judge_queue_max_depth = outcome.max_depth;
    res.metrics.mean_eval_judge_latency =
        outcome.evals_completed > 0 ? outcome.eval_latency_sum / outcome.evals_completed : 0.0;
    res.metrics.carried_over_rollouts = started - finished;
    // nodes never wait on the judges: busy for the whole horizon
    res.metrics.rollout_node_utilization = 1.0;
    return res;
}

} // namespace

SimResult simulate(const ClusterSpec& spec, SimStrategy strategy, double horizon,
                   std::uint64_t seed) {
    spec.validate();
    if (horizon < spec.rollout_duration)
        throw Error(Errc::invalid_spec, "horizon must be >= rollout_duration");

    SimResult res = strategy == SimStrategy::synchronous ? simulate_synchronous(spec, horizon, seed)
                                                         : simulate_partial(spec, horizon, seed);
    std::stable_sort(res.events.begin(), res.events.end(),
                     [](const SimEvent& a, const SimEvent& b) { return a.time < b.time; });
    std::erase_if(res.events, [&](const SimEvent& e) { return e.time > horizon; });
    return res;
}

StrategyComparison compare_strategies(const ClusterSpec& spec, double horizon,
                                      std::uint64_t seed) {
    StrategyComparison cmp;
    cmp.synchronous = simulate(spec, SimStrategy::synchronous, horizon, seed).metrics;
    cmp.partial = simulate(spec, SimStrategy::partial_rollout_priority, horizon, seed).metrics;
    cmp.utilization_delta =
        cmp.partial.rollout_node_utilization - cmp.synchronous.rollout_node_utilization;
    cmp.eval_latency_delta =
        cmp.partial.mean_eval_judge_latency - cmp.synchronous.mean_eval_judge_latency;
    cmp.carried_over = cmp.partial.carried_over_rollouts;
    return cmp;
}

std::string encode_events(const std::vector<SimEvent>& events) {
    std::ostringstream out;
    out << "evv1\n";
    for (const auto& e : events)
        out << text::format_double(e.time) << " " << sim_event_kind_name(e.kind) << " " << e.entity
            << " " << priority_class_name(e.priority_class) << "\n";
    return out.str();
}

std::vector<SimEvent> decode_events(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || text::split_ws(line) != std::vector<std::string>{"evv1"})
        throw Error(Errc::parse_error, "expected 'evv1' header");
    std::vector<SimEvent> events;
    while (std::getline(in, line)) {
        auto f = text::split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 4) throw Error(Errc::parse_error, "bad event line '" + line + "'");
        SimEvent e;
        e.time = text::parse_double(f[0]);
        bool known = false;
        for (SimEventKind k :
             {SimEventKind::rollout_start, SimEventKind::rollout_end, SimEventKind::judge_enqueue,
              SimEventKind::judge_start, SimEventKind::judge_end}) {
            if (f[1] == sim_event_kind_name(k)) {
                e.kind = k;
                known = true;
            }
        }
        if (!known) throw Error(Errc::parse_error, "unknown event kind '" + f[1] + "'");
        e.entity = f[2];
        if (f[3] == "eval") {
            e.priority_class = PriorityClass::eval_set;
        } else if (f[3] == "train") {
            e.priority_class = PriorityClass::train_set;
        } else {
            throw Error(Errc::parse_error, "unknown priority class '" + f[3] + "'");
        }
        events.push_back(std::move(e));
    }
    return events;
}

void write_events_file(const std::vector<SimEvent>& events, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    out << encode_events(events);
    if (!out) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

std::vector<SimEvent> read_events_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_events(buf.str());
}

} // namespace longhaul
