#pragma once

#include <set>
#include <string>
#include <vector>

#include "longhaul/trajectory.hpp"

namespace longhaul {

// Window/overlap geometry is expressed in regular steps; the hard context
// cap is expressed in tokens. Both constraints apply.
struct SplitConfig {
    int max_context_tokens = 4096; // token budget per sub-trajectory
    int window_steps = 8;          // window length, in regular steps
    int overlap_steps = 1;         // steps shared between consecutive windows
    bool dedup_loss_on_overlap = false;

    // Throws InvalidConfig naming the violated constraint.
    void validate() const;
};

// Planned window over regular steps, 1-based inclusive.
struct Window {
    int start = 0;
    int end = 0;
    bool operator==(const Window&) const = default;
};

// A window slice of a parent trajectory with the parent's prefix steps
// pinned in front and a per-action-token supervision mask over the kept
// window steps. Prefix tokens are never part of the mask.
struct SubTrajectory {
    std::string parent_id;
    int start_step = 0;              // planned window start (regular index)
    int end_step = 0;                // planned window end
    int kept_from = 0;               // first window step kept after truncation
    std::vector<Step> pinned_prefix; // parent's prefix steps, verbatim
    std::vector<Step> steps;         // kept window steps
    std::vector<uint8_t> loss_mask;  // one flag per action token of `steps`

    int kept_count() const { return end_step - kept_from + 1; }
    // Absolute regular-step indices that carry at least one unmasked token.
    std::vector<int> supervised_steps() const;
};

// Per-action-token supervision multiplicities across a set of sub-trajectories.
struct CoverageReport {
    std::vector<int> token_multiplicity;  // flattened over regular steps' action tokens
    std::vector<int> step_multiplicity;   // same data, one entry per regular step
    std::vector<int> uncovered_tokens;    // multiplicity 0 (e.g. front-truncated)
    std::vector<int> duplicated_tokens;   // multiplicity > 1 (overlap double counting)
};

// Window layout over n regular steps: stride window_steps - overlap_steps,
// final window end-aligned so the last actions get a full-length context.
// Returns one window when n <= window_steps, nothing when n == 0.
std::vector<Window> plan_splits(int n_regular_steps, const SplitConfig& config);

// Builds one sub-trajectory. If prefix plus window exceeds the token budget,
// steps are dropped from the front of the window until it fits, never below
// one step. With dedup enabled, action tokens of steps in earlier_supervised
// are masked out.
SubTrajectory materialize_subtrajectory(const Trajectory& traj, Window window,
                                        const SplitConfig& config,
                                        const std::set<int>& earlier_supervised,
                                        const std::string& parent_id = "traj");

// Full pipeline: plan, then materialize each window in order, accumulating
// earlier-supervised steps for overlap dedup.
std::vector<SubTrajectory> split_trajectory(const Trajectory& traj, const SplitConfig& config,
                                            const std::string& parent_id = "traj");

CoverageReport coverage_report(const Trajectory& traj, const std::vector<SubTrajectory>& subs);

// Audit export: one line per window with parent_id, start, end, kept_after_truncation.
std::string format_split_plan(const std::vector<SubTrajectory>& subs);

} // namespace longhaul
