#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace longhaul {

// Rollout/judge cluster description. rollout_duration is the per-iteration
// collection window; task_duration is the full logical length of one
// rollout (> rollout_duration means a rollout spans several iterations and
// must be carried over under the partial strategy; 0 means "same as
// rollout_duration").
struct ClusterSpec {
    int rollout_nodes = 1;
    int judge_workers = 1;
    double rollout_duration = 1.0;
    double judge_service_time = 0.0;
    int judge_requests_per_rollout = 1;

    double task_duration = 0.0;         // 0 -> rollout_duration
    int eval_requests_per_iteration = 0; // high-priority judge load per iteration
    double judge_failure_prob = 0.0;     // per-attempt failure; one retry

    void validate() const; // throws InvalidSpec naming the bad field
    double effective_task_duration() const {
        return task_duration > 0 ? task_duration : rollout_duration;
    }
};

enum class SimEventKind { rollout_start, rollout_end, judge_enqueue, judge_start, judge_end };
enum class PriorityClass { eval_set, train_set };

const char* sim_event_kind_name(SimEventKind k);
const char* priority_class_name(PriorityClass c);

struct SimEvent {
    double time = 0.0;
    SimEventKind kind = SimEventKind::rollout_start;
    std::string entity; // "n<node>r<rollout>" or "q<request>"
    PriorityClass priority_class = PriorityClass::train_set;

    bool operator==(const SimEvent&) const = default;
};

struct SimMetrics {
    double rollout_node_utilization = 0.0; // busy node time / (nodes * horizon)
    int judge_queue_max_depth = 0;         // waiting requests, in-service excluded
    double mean_eval_judge_latency = 0.0;  // enqueue -> final judge_end, completed evals
    int carried_over_rollouts = 0;         // in flight when the horizon cuts off
    int resume_events = 0;                 // carry-over resumptions (partial strategy)
    int iterations_completed = 0;          // rollout collection phases finished in horizon
};

enum class SimStrategy { synchronous, partial_rollout_priority };

struct SimResult {
    std::vector<SimEvent> events; // time-ordered, truncated at the horizon
    SimMetrics metrics;
};

// Synchronous: every node rolls from the cycle start for rollout_duration,
// then all judge requests for the batch enqueue at once and the nodes sit
// idle until the batch is fully judged. Partial: nodes run logical rollouts
// back to back, pausing only at iteration boundaries (multiples of
// rollout_duration) where unfinished rollouts carry over and resume; judge
// requests enqueue at rollout completion and eval requests at each
// boundary; eval_set requests are served before train_set, non-preemptive,
// ties by enqueue time then request id. Throws InvalidSpec (also when
// horizon < rollout_duration).
SimResult simulate(const ClusterSpec& spec, SimStrategy strategy, double horizon,
                   std::uint64_t seed);

struct StrategyComparison {
    SimMetrics synchronous;
    SimMetrics partial;
    double utilization_delta = 0.0;  // partial - synchronous
    double eval_latency_delta = 0.0; // partial - synchronous
    int carried_over = 0;            // under the partial strategy
};

// Runs both strategies on the identical spec/seed workload.
StrategyComparison compare_strategies(const ClusterSpec& spec, double horizon, std::uint64_t seed);

// Event log format "evv1": header, then one "time kind entity class" line
// per event.
std::string encode_events(const std::vector<SimEvent>& events);
std::vector<SimEvent> decode_events(const std::string& content);
void write_events_file(const std::vector<SimEvent>& events, const std::string& path);
std::vector<SimEvent> read_events_file(const std::string& path);

} // namespace longhaul
