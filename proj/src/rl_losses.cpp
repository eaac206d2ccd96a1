#include "longhaul/rl_losses.hpp"

#include <algorithm>
#include <cmath>

#include "longhaul/errors.hpp"

namespace longhaul {

void RlHyperparams::validate() const {
    if (!(clip_epsilon > 0.0) || !(clip_epsilon < 1.0))
        throw Error(Errc::invalid_config, "clip_epsilon must lie in (0, 1)");
    if (kl_weight < 0.0) throw Error(Errc::invalid_config, "kl_weight must be nonnegative");
}

WindowSample attach_records(SubTrajectory sub, const std::vector<StepRecord>& parent_records) {
    if (parent_records.size() < static_cast<size_t>(sub.end_step))
        throw Error(Errc::length_mismatch, "rollout records do not cover the window");
    WindowSample w;
    w.step_states.assign(parent_records.begin() + (sub.kept_from - 1),
                         parent_records.begin() + sub.end_step);
    w.sub = std::move(sub);
    return w;
}

namespace {

void check_window(const WindowSample& w) {
    if (w.step_states.size() != w.sub.steps.size())
        throw Error(Errc::length_mismatch, "window has " + std::to_string(w.sub.steps.size()) +
                                               " steps but " + std::to_string(w.step_states.size()) +
                                               " state records");
}

// Calls fn(record, unmasked_token_count) for every kept step of the window.
template <typename Fn>
void for_each_step(const WindowSample& w, Fn&& fn) {
    check_window(w);
    size_t off = 0;
    for (size_t k = 0; k < w.sub.steps.size(); ++k) {
        const int act = w.sub.steps[k].act_tokens;
        int unmasked = 0;
        for (int t = 0; t < act; ++t)
            if (w.sub.loss_mask[off + static_cast<size_t>(t)]) ++unmasked;
        off += static_cast<size_t>(act);
        if (unmasked > 0) fn(w.step_states[k], unmasked);
    }
}

void check_batch(const GroupBatch& batch) {
    if (batch.rollouts.empty()) throw Error(Errc::empty_batch, "group has no rollouts");
    if (batch.rewards.size() != batch.rollouts.size())
        throw Error(Errc::length_mismatch, "rewards/rollouts rollout counts differ");
    size_t windows = 0;
    for (size_t j = 0; j < batch.rollouts.size(); ++j) {
        if (batch.rewards[j].size() != batch.rollouts[j].size())
            throw Error(Errc::length_mismatch, "rewards/rollouts window counts differ");
        windows += batch.rollouts[j].size();
    }
    if (windows == 0) throw Error(Errc::empty_batch, "group has no windows");
}

} // namespace

double sft_loss(const PolicyParams& params, const std::vector<WindowSample>& windows) {
    double sum = 0.0;
    long long tokens = 0;
    for (const auto& w : windows) {
        for_each_step(w, [&](const StepRecord& r, int m) {
            sum -= m * policy_logprob(params, r.subtask, r.position, r.action);
            tokens += m;
        });
    }
    if (tokens == 0) throw Error(Errc::empty_loss_mask, "no unmasked action tokens");
    return sum / static_cast<double>(tokens);
}

PolicyParams sft_loss_gradient(const PolicyParams& params,
                               const std::vector<WindowSample>& windows) {
    PolicyParams grad = params;
    std::fill(grad.logits.begin(), grad.logits.end(), 0.0);
    long long tokens = 0;
    for (const auto& w : windows) {
        for_each_step(w, [&](const StepRecord& r, int m) {
            auto probs = policy_probs(params, r.subtask, r.position);
            for (int b = 0; b < params.vocab_size; ++b) {
                const double indicator = (b == r.action) ? 1.0 : 0.0;
                grad.at(r.subtask, r.position, b) += m * (probs[static_cast<size_t>(b)] - indicator);
            }
            tokens += m;
        });
    }
    if (tokens == 0) throw Error(Errc::empty_loss_mask, "no unmasked action tokens");
    for (double& g : grad.logits) g /= static_cast<double>(tokens);
    return grad;
}

std::vector<std::vector<double>> group_advantages(const GroupBatch& batch) {
    check_batch(batch);
    double sum = 0.0;
    size_t count = 0;
    for (const auto& row : batch.rewards) {
        for (double q : row) sum += q;
        count += row.size();
    }
    const double mean = sum / static_cast<double>(count);
    auto adv = batch.rewards;
    for (auto& row : adv)
        for (double& q : row) q -= mean;
    return adv;
}

double likelihood_ratio(const PolicyParams& params, const ReferenceSnapshot& ref, int subtask,
                        int position, int action) {
    return std::exp(policy_logprob(params, subtask, position, action) -
                    policy_logprob(ref.logits, subtask, position, action));
}

namespace {

double exact_kl(const PolicyParams& params, const ReferenceSnapshot& ref, int subtask,
                int position) {
    double kl = 0.0;
    for (int b = 0; b < params.vocab_size; ++b) {
        const double lp = policy_logprob(params, subtask, position, b);
        const double lq = policy_logprob(ref.logits, subtask, position, b);
        kl += std::exp(lp) * (lp - lq);
    }
    return kl;
}

} // namespace

double clipped_rl_loss(const PolicyParams& params, const ReferenceSnapshot& ref,
                       const GroupBatch& batch, const RlHyperparams& hp) {
    check_batch(batch);
    const auto adv = group_advantages(batch);

    size_t total_windows = 0;
    for (const auto& r : batch.rollouts) total_windows += r.size();

    double policy_sum = 0.0; // sum over windows of (normalized) token sums
    double kl_sum = 0.0;
    long long kl_tokens = 0;
    for (size_t j = 0; j < batch.rollouts.size(); ++j) {
        for (size_t i = 0; i < batch.rollouts[j].size(); ++i) {
            const WindowSample& w = batch.rollouts[j][i];
            const double a_hat = adv[j][i];
            double window_sum = 0.0;
            long long window_tokens = 0;
            for_each_step(w, [&](const StepRecord& r, int m) {
                const double ratio = likelihood_ratio(params, ref, r.subtask, r.position, r.action);
                const double clipped =
                    std::clamp(ratio, 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
                window_sum += m * std::min(ratio * a_hat, clipped * a_hat);
                window_tokens += m;
                kl_sum += m * exact_kl(params, ref, r.subtask, r.position);
                kl_tokens += m;
            });
            if (window_tokens > 0 && hp.per_token_norm)
                window_sum /= static_cast<double>(window_tokens);
            policy_sum += window_sum;
        }
    }

    double loss = -policy_sum / static_cast<double>(total_windows);
    if (kl_tokens > 0) loss += hp.kl_weight * kl_sum / static_cast<double>(kl_tokens);
    return loss;
}

PolicyParams loss_gradient(const PolicyParams& params, const ReferenceSnapshot& ref,
                           const GroupBatch& batch, const RlHyperparams& hp) {
    check_batch(batch);
    const auto adv = group_advantages(batch);

    size_t total_windows = 0;
    for (const auto& r : batch.rollouts) total_windows += r.size();

    PolicyParams grad = params;
    std::fill(grad.logits.begin(), grad.logits.end(), 0.0);

    // KL token count must be known before scaling, so gather per-token work
    // in a first pass keyed by (window, step).
    long long kl_tokens = 0;
    for (const auto& rollout : batch.rollouts)
        for (const auto& w : rollout)
            for_each_step(w, [&](const StepRecord&, int m) { kl_tokens += m; });

    for (size_t j = 0; j < batch.rollouts.size(); ++j) {
        for (size_t i = 0; i < batch.rollouts[j].size(); ++i) {
            const WindowSample& w = batch.rollouts[j][i];
            const double a_hat = adv[j][i];
            long long window_tokens = 0;
            for_each_step(w, [&](const StepRecord&, int m) { window_tokens += m; });
            const double policy_scale =
                (window_tokens > 0 && hp.per_token_norm)
                    ? -1.0 / (static_cast<double>(total_windows) * static_cast<double>(window_tokens))
                    : -1.0 / static_cast<double>(total_windows);

            for_each_step(w, [&](const StepRecord& r, int m) {
                auto probs = policy_probs(params, r.subtask, r.position);
                const double ratio =
                    likelihood_ratio(params, ref, r.subtask, r.position, r.action);
                const double clipped =
                    std::clamp(ratio, 1.0 - hp.clip_epsilon, 1.0 + hp.clip_epsilon);
                const double unclipped_term = ratio * a_hat;
                const double clipped_term = clipped * a_hat;

                // min picks the unclipped branch when it is <= the clipped
                // one; only that branch depends on theta (d ratio / d logit_b
                // = ratio * (indicator - p_b)). Otherwise the clip freezes
                // the term and the policy gradient through it is zero.
                if (unclipped_term <= clipped_term) {
                    for (int b = 0; b < params.vocab_size; ++b) {
                        const double indicator = (b == r.action) ? 1.0 : 0.0;
                        grad.at(r.subtask, r.position, b) +=
                            policy_scale * m * a_hat * ratio *
                            (indicator - probs[static_cast<size_t>(b)]);
                    }
                }

                if (hp.kl_weight > 0.0 && kl_tokens > 0) {
                    const double kl = exact_kl(params, ref, r.subtask, r.position);
                    const double kl_scale = hp.kl_weight * m / static_cast<double>(kl_tokens);
                    for (int b = 0; b < params.vocab_size; ++b) {
                        const double lp = policy_logprob(params, r.subtask, r.position, b);
                        const double lq = policy_logprob(ref.logits, r.subtask, r.position, b);
                        grad.at(r.subtask, r.position, b) +=
                            kl_scale * probs[static_cast<size_t>(b)] * ((lp - lq) - kl);
                    }
                }
            });
        }
    }
    return grad;
}

} // namespace longhaul
