#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace longhaul {

enum class StepKind { prefix, regular };

// One agent step. Token contents are opaque; only counts are stored, so the
// splitting arithmetic stays independent of any tokenizer.
struct Step {
    StepKind kind = StepKind::regular;
    int obs_tokens = 0;   // observation length, tokens
    int act_tokens = 0;   // action length, tokens
    double time_cost = 0; // wall-clock units consumed by the step

    bool operator==(const Step&) const = default;
};

// Ordered rollout record. Prefix-kind steps (task spec, mandatory reading)
// come first; regular steps are assistant turns. Time is in abstract units.
struct Trajectory {
    std::vector<Step> steps;
    int64_t env_seed = 0;
    std::string terminal_snapshot_id; // encoding of the final environment state

    bool operator==(const Trajectory&) const = default;
};

struct ValidationReport {
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};

// Supervised example: input context and training target, both synthetic
// token-id sequences. Dataset size is just the length of a list of these.
struct SftExample {
    std::vector<int> context_tokens;
    std::vector<int> target_tokens;
};

// Lists every violated invariant; never throws. Empty report iff well-formed.
ValidationReport validate_trajectory(const Trajectory& traj);

int token_length(const Step& step);
int token_length(const Trajectory& traj);

// Number of regular-kind steps; each regular step is one assistant turn.
int assistant_turns(const Trajectory& traj);

// Count of prefix-kind steps at the head of the list.
int prefix_step_count(const Trajectory& traj);

Trajectory append(Trajectory traj, const Step& step);

// Line-delimited trajectory file, format "hfv1". Header carries the format
// version, env_seed and terminal snapshot id; then one step per line with
// fields in fixed order: kind, obs_tokens, act_tokens, time_cost.
void encode_trajectory(const Trajectory& traj, std::ostream& out);
Trajectory decode_trajectory(std::istream& in);

void write_trajectory_file(const Trajectory& traj, const std::string& path);
Trajectory read_trajectory_file(const std::string& path);

} // namespace longhaul
