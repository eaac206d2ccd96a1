#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longhaul/rubric.hpp"
#include "longhaul/snapshot.hpp"
#include "longhaul/trajectory.hpp"

namespace longhaul {

// Deterministic subtask chain: D subtasks, each a fixed sequence of
// positions; the correct action at (subtask, position) advances, anything
// else burns time. Prefix steps model mandatory context reading: zero time,
// fixed tokens, no action.
struct ChainTask {
    int n_subtasks = 1;          // D
    int actions_per_subtask = 1; // positions per subtask
    int vocab_size = 2;          // V
    std::vector<int> correct_action;      // [d * actions_per_subtask + p] -> action id
    std::vector<double> action_time_cost; // [action id] -> positive units
    int prefix_steps = 0;                 // P
    double time_budget = 1.0;             // full-task budget
    RubricNode rubric;                    // one leaf per subtask

    // Token sizes of emitted steps (the splitter works in tokens).
    int prefix_obs_tokens = 16;
    int step_obs_tokens = 6;
    int step_act_tokens = 2;

    int state_count() const { return n_subtasks * actions_per_subtask; }
    int state_index(int subtask, int position) const;
    int correct_at(int subtask, int position) const;
};

// Throws InvalidConfig on the first violated constraint (also checks the
// rubric and that its leaf count equals n_subtasks).
void validate_task(const ChainTask& task);

// Convenience builder: correct action at (d, p) is (d + p) % V, uniform
// action cost, per-subtask completion rubric.
ChainTask make_chain_task(int n_subtasks, int actions_per_subtask, int vocab_size,
                          double action_cost, int prefix_steps, double time_budget);

// Tabular softmax policy over (subtask, position) states.
struct PolicyParams {
    int n_subtasks = 0;
    int actions_per_subtask = 0;
    int vocab_size = 0;
    std::vector<double> logits; // [(d * actions_per_subtask + p) * vocab_size + a]

    int state_count() const { return n_subtasks * actions_per_subtask; }
    double& at(int subtask, int position, int action);
    double at(int subtask, int position, int action) const;
};

PolicyParams zero_params(const ChainTask& task);
// Logit `scale` on every correct action, 0 elsewhere. Greedy rollouts of
// these params replay the scripted solution.
PolicyParams expert_params(const ChainTask& task, double scale = 10.0);
PolicyParams random_params(const ChainTask& task, std::uint64_t seed, double scale = 1.0);

// Frozen copy of the policy used as the ratio/KL anchor.
struct ReferenceSnapshot {
    PolicyParams logits;
};
ReferenceSnapshot make_reference(const PolicyParams& params);

// Stable log-softmax over the V logits at one state. Throws IndexOutOfRange.
double policy_logprob(const PolicyParams& params, int subtask, int position, int action);
// Full softmax at one state.
std::vector<double> policy_probs(const PolicyParams& params, int subtask, int position);
// Mean Shannon entropy in nats across all states.
double policy_entropy(const PolicyParams& params);

// State/action pair behind one regular trajectory step; the k-th record
// corresponds to regular step k+1 of the trajectory.
struct StepRecord {
    int subtask = 0;
    int position = 0;
    int action = 0;
    bool operator==(const StepRecord&) const = default;
};

struct RolloutResult {
    Trajectory traj;
    std::vector<StepRecord> records;
    EnvSnapshot final_snapshot;
};

enum class ActionMode { sample, greedy };

// Runs the policy until the chain completes or the next action would push
// cumulative time past `timeout` (that step is not taken). `timeout` is the
// total budget from the start of the episode, so resuming a partial rollout
// with a larger timeout reproduces a single longer rollout bit-for-bit: the
// k-th action always consumes draw k of the stream derived from `seed`.
RolloutResult rollout_with_timeout(const ChainTask& task, const PolicyParams& params,
                                   double timeout, std::uint64_t seed,
                                   const RolloutResult* resume_from = nullptr,
                                   ActionMode mode = ActionMode::sample);

// Task definition file, versioned "tkv1". The rubric line is either
// "rubric chain" (per-subtask completion rubric) or "rubric file <path>"
// (rbv1 file, resolved relative to the task file).
std::string encode_task(const ChainTask& task);
ChainTask decode_task(const std::string& content, const std::string& base_dir = "");
void write_task_file(const std::string& path, const ChainTask& task);
ChainTask read_task_file(const std::string& path);

} // namespace longhaul
