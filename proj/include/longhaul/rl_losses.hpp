#pragma once

#include <vector>

#include "longhaul/chain_env.hpp"
#include "longhaul/splitter.hpp"

namespace longhaul {

// A sub-trajectory paired with the (state, action) behind each of its kept
// steps, so losses can look up policy logprobs. step_states[k] corresponds
// to sub.steps[k]; pinned prefix steps carry no actions and stay unpaired.
struct WindowSample {
    SubTrajectory sub;
    std::vector<StepRecord> step_states;
};

// Slices the parent rollout's records down to the window's kept steps.
// Throws LengthMismatch when the records don't cover the window.
WindowSample attach_records(SubTrajectory sub, const std::vector<StepRecord>& parent_records);

// One RL group: n rollouts, each split into K_j windows, each window carrying
// a terminal-rubric reward. Rewards are indexed [rollout][window].
struct GroupBatch {
    std::vector<std::vector<WindowSample>> rollouts;
    std::vector<std::vector<double>> rewards;
    int stage_index = 0;
};

struct RlHyperparams {
    double clip_epsilon = 0.2; // ratio clip half-width
    double kl_weight = 0.01;   // reference-anchor strength
    // Divide each window's token sum by its unmasked-token count on top of
    // the 1/(total windows) factor; off recovers the raw token sum form.
    bool per_token_norm = true;

    // Boundary check for configs: clip in (0,1), kl_weight >= 0. Loss code
    // accepts any positive clip so degenerate settings stay testable.
    void validate() const;
};

// Mean over unmasked action tokens of -logprob of the recorded action.
// Throws EmptyLossMask when nothing is unmasked.
double sft_loss(const PolicyParams& params, const std::vector<WindowSample>& windows);
// Exact analytic gradient of sft_loss, shaped like the policy table.
PolicyParams sft_loss_gradient(const PolicyParams& params,
                               const std::vector<WindowSample>& windows);

// Reward minus the mean reward over every window of every rollout in the
// group; sums to zero. Throws EmptyBatch on an empty group.
std::vector<std::vector<double>> group_advantages(const GroupBatch& batch);

double likelihood_ratio(const PolicyParams& params, const ReferenceSnapshot& ref, int subtask,
                        int position, int action);

// Clipped group-relative surrogate plus exact categorical KL to the
// reference: -(1/W) sum over windows of [token sum of min(r*adv,
// clip(r)*adv)] + kl_weight * token-mean KL at visited states, where W is
// the total window count. Throws EmptyBatch.
double clipped_rl_loss(const PolicyParams& params, const ReferenceSnapshot& ref,
                       const GroupBatch& batch, const RlHyperparams& hp);

// Exact analytic gradient of clipped_rl_loss with respect to every logit;
// tokens on the clipped branch contribute zero through the policy term.
PolicyParams loss_gradient(const PolicyParams& params, const ReferenceSnapshot& ref,
                           const GroupBatch& batch, const RlHyperparams& hp);

} // namespace longhaul
