#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longhaul/chain_env.hpp"
#include "longhaul/rl_losses.hpp"
#include "longhaul/splitter.hpp"

namespace longhaul {

// Staged timeouts for the RL phase; stage m trains and evaluates with
// rollouts truncated at timeouts[m]. Timeouts must strictly increase.
struct StageSchedule {
    std::vector<double> timeouts;
    std::vector<int> iterations_per_stage;
    std::vector<int> group_sizes; // rollouts per iteration, per stage

    int stages() const { return static_cast<int>(timeouts.size()); }
};

// Throws NonIncreasingTimeouts / LengthMismatch / NonPositiveEntries.
// An empty schedule is valid: training is then SFT-only.
StageSchedule build_schedule(const std::vector<double>& timeouts, const std::vector<int>& iters,
                             int group_size);

struct MetricRecord {
    int iteration = 0; // global, strictly increasing across the whole run
    int stage = 0;     // 0 = supervised warm start, 1.. = RL stages
    double q_mean = 0.0;
    double turns_mean = 0.0;
    double entropy = 0.0;
    double loss = 0.0;

    bool operator==(const MetricRecord&) const = default;
};

// Append-only run log; iteration indices must strictly increase.
struct TrainRunMetrics {
    std::vector<MetricRecord> records;
    void append(const MetricRecord& r);
};

// Metrics file format "mxv1": header, then one record per line with fields
// iteration stage q_mean turns_mean entropy loss.
std::string encode_metrics(const TrainRunMetrics& metrics);
TrainRunMetrics decode_metrics(const std::string& content);
void write_metrics_file(const TrainRunMetrics& metrics, const std::string& path);
TrainRunMetrics read_metrics_file(const std::string& path);

struct TrainOptions {
    int sft_steps = 200;
    double sft_learning_rate = 0.5;
    double rl_learning_rate = 0.1;
    int gradient_steps_per_iteration = 4; // per rollout batch, against one reference
    int n_eval = 16;                      // evaluation rollouts per logged record
    int sft_record_every = 10;            // metric-row stride during the warm start
};

struct EvalSummary {
    double q_mean = 0.0;
    double turns_mean = 0.0;
    double entropy = 0.0;
};

// Mean judge score and assistant turns over n_eval seeded rollouts at the
// given timeout, plus the policy entropy. Throws EmptyEvaluation if n_eval
// is not positive.
EvalSummary evaluate(const PolicyParams& params, const ChainTask& task, double timeout, int n_eval,
                     std::uint64_t seed, ActionMode mode = ActionMode::sample);

// Scripted-expert demonstrations: greedy rollouts of a correct-by-
// construction policy at the full task budget.
std::vector<RolloutResult> make_demonstrations(const ChainTask& task, int count,
                                               std::uint64_t seed);

// Per-iteration view handed to the observer before gradient steps apply;
// pointers are valid only for the duration of the callback.
struct RlIterationInfo {
    int stage = 0; // 1-based
    int iteration_in_stage = 0;
    std::uint64_t batch_seed = 0;
    const GroupBatch* batch = nullptr;
    const PolicyParams* params_at_start = nullptr;
    const ReferenceSnapshot* ref = nullptr;
    double loss = 0.0; // clipped_rl_loss at iteration start (ratio == 1)
};

struct TrainObserver {
    virtual ~TrainObserver() = default;
    // loss is measured before the step's update is applied
    virtual void on_sft_step(int /*step*/, double /*loss*/, const PolicyParams& /*params*/) {}
    virtual void on_rl_iteration(const RlIterationInfo& /*info*/) {}
};

// Warm start on the demonstrations (skipped when sft_data is empty), then
// staged RL: every iteration refreshes the reference from the current
// params, draws group_size rollouts at the stage timeout, splits them,
// scores each rollout's terminal snapshot against the task rubric (all
// windows of a rollout share its reward), and applies gradient steps.
// Iterations whose group yields a single window skip the update (advantage
// is identically zero); a stage with no windows at all ends early. Eval
// metrics are appended every iteration at the stage timeout. Deterministic
// given seed.
struct TrainResult {
    PolicyParams params;
    TrainRunMetrics metrics;
};

TrainResult run_training(const ChainTask& task, const std::vector<RolloutResult>& sft_data,
                         const StageSchedule& schedule, const SplitConfig& split_config,
                         const RlHyperparams& hp, std::uint64_t seed,
                         const TrainOptions& options = {}, TrainObserver* observer = nullptr);

} // namespace longhaul
