// Supervised and clipped group-relative losses with exact gradients checked
// against central finite differences.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "longhaul/errors.hpp"
#include "longhaul/rl_losses.hpp"
#include "longhaul/rng.hpp"
#include "test_support.hpp"

using namespace longhaul;

namespace {

// Hand-built window: one step per record, one action token each, all unmasked.
WindowSample window(std::vector<StepRecord> recs) {
    WindowSample w;
    w.sub.start_step = 1;
    w.sub.end_step = static_cast<int>(recs.size());
    w.sub.kept_from = 1;
    for (size_t i = 0; i < recs.size(); ++i) {
        w.sub.steps.push_back(Step{StepKind::regular, 0, 1, 1.0});
        w.sub.loss_mask.push_back(1);
    }
    w.step_states = std::move(recs);
    return w;
}

RlHyperparams hyper(double eps, double beta, bool per_token = true) {
    RlHyperparams hp;
    hp.clip_epsilon = eps;
    hp.kl_weight = beta;
    hp.per_token_norm = per_token;
    return hp;
}

PolicyParams one_state(std::vector<double> logits) {
    PolicyParams p;
    p.n_subtasks = 1;
    p.actions_per_subtask = 1;
    p.vocab_size = static_cast<int>(logits.size());
    p.logits = std::move(logits);
    return p;
}

// Rollout -> split -> attach, with synthetic per-window rewards drawn around
// the judged score so advantages vary.
GroupBatch make_batch(const ChainTask& task, const PolicyParams& behavior, int n, double timeout,
                      const SplitConfig& scfg, std::uint64_t seed) {
    GroupBatch b;
    for (int j = 0; j < n; ++j) {
        const auto ro =
            rollout_with_timeout(task, behavior, timeout, rng::derive(seed, 0x9a7c, j));
        const auto subs = split_trajectory(ro.traj, scfg);
        const double q = score_rubric(task.rubric, ro.final_snapshot).score;
        std::vector<WindowSample> ws;
        std::vector<double> rs;
        for (size_t i = 0; i < subs.size(); ++i) {
            ws.push_back(attach_records(subs[i], ro.records));
            rs.push_back(q + rng::uniform(rng::derive(seed, 0x0e3a, j), i, -0.3, 0.3));
        }
        b.rollouts.push_back(std::move(ws));
        b.rewards.push_back(std::move(rs));
    }
    return b;
}

// Central finite difference of fn over one logit.
double fd_partial(PolicyParams params, size_t idx,
                  const std::function<double(const PolicyParams&)>& fn, double h = 1e-5) {
    const double saved = params.logits[idx];
    params.logits[idx] = saved + h;
    const double up = fn(params);
    params.logits[idx] = saved - h;
    const double down = fn(params);
    return (up - down) / (2.0 * h);
}

void check_gradient(const PolicyParams& params, const PolicyParams& grad,
                    const std::function<double(const PolicyParams&)>& fn) {
    for (size_t i = 0; i < params.logits.size(); ++i) {
        const double fd = fd_partial(params, i, fn);
        const double an = grad.logits[i];
        const double tol = 1e-4 * std::max({std::abs(fd), std::abs(an), 1e-6});
        if (std::abs(fd - an) > tol) {
            CAPTURE(i);
            CAPTURE(fd);
            CAPTURE(an);
            CHECK(std::abs(fd - an) <= tol);
        }
    }
}

const ChainTask kTask = make_chain_task(3, 2, 4, 0.5, 1, 12.0);

SplitConfig split_cfg(int window, int overlap, bool dedup = false) {
    SplitConfig c;
    c.window_steps = window;
    c.overlap_steps = overlap;
    c.max_context_tokens = 1 << 20;
    c.dedup_loss_on_overlap = dedup;
    return c;
}

} // namespace

TEST_CASE("hyperparameter boundary checks") {
    CHECK_NOTHROW(hyper(0.2, 0.01).validate());
    CHECK_THROWS_AS(hyper(0.0, 0.0).validate(), Error);
    CHECK_THROWS_AS(hyper(1.0, 0.0).validate(), Error);
    CHECK_THROWS_AS(hyper(0.2, -0.1).validate(), Error);
    CHECK_NOTHROW(hyper(0.999, 0.0).validate());
}

TEST_CASE("attach_records slices the parent records to the kept window") {
    std::vector<StepRecord> recs;
    for (int k = 0; k < 10; ++k) recs.push_back({0, 0, k % 3});
    SubTrajectory sub;
    sub.start_step = 2;
    sub.end_step = 7;
    sub.kept_from = 3;
    for (int k = 3; k <= 7; ++k) {
        sub.steps.push_back(Step{StepKind::regular, 0, 1, 1.0});
        sub.loss_mask.push_back(1);
    }
    const auto w = attach_records(sub, recs);
    REQUIRE(w.step_states.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(w.step_states[static_cast<size_t>(k)] == recs[static_cast<size_t>(k + 2)]);

    sub.end_step = 11; // beyond the rollout
    CHECK_THROWS_AS(attach_records(sub, recs), Error);
}

TEST_CASE("sft loss is zero when the policy already matches the targets") {
    const PolicyParams expert = expert_params(kTask, 1000.0);
    std::vector<StepRecord> recs;
    for (int d = 0; d < 3; ++d)
        for (int p = 0; p < 2; ++p) recs.push_back({d, p, kTask.correct_at(d, p)});
    const std::vector<WindowSample> ws{window(recs)};
    CHECK(sft_loss(expert, ws) == 0.0);
}

TEST_CASE("sft loss under the uniform four-way policy is ln 4") {
    const PolicyParams uniform = zero_params(kTask);
    const std::vector<WindowSample> ws{window({{0, 0, 3}, {1, 1, 0}, {2, 0, 2}})};
    CHECK(sft_loss(uniform, ws) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("overlap double counting changes the sft loss by exactly the repeated terms") {
    const ChainTask task = make_chain_task(2, 3, 3, 1.0, 0, 100.0);
    const PolicyParams p = random_params(task, 3, 1.5);
    const auto ro = rollout_with_timeout(task, p, 5.0, 21); // 5 regular steps
    REQUIRE(ro.records.size() == 5);

    auto attach_all = [&](bool dedup) {
        std::vector<WindowSample> ws;
        for (const auto& sub : split_trajectory(ro.traj, split_cfg(3, 1, dedup)))
            ws.push_back(attach_records(sub, ro.records));
        return ws;
    };
    // windows (1,3),(3,5): step 3 supervised twice without dedup
    const double twice = sft_loss(p, attach_all(false));
    const double once = sft_loss(p, attach_all(true));

    auto lp = [&](const StepRecord& r) {
        return policy_logprob(p, r.subtask, r.position, r.action);
    };
    double base = 0.0;
    for (const auto& r : ro.records) base -= task.step_act_tokens * lp(r);
    const double dup = -static_cast<double>(task.step_act_tokens) * lp(ro.records[2]);
    const double tokens = 5.0 * task.step_act_tokens;
    CHECK(once == doctest::Approx(base / tokens).epsilon(1e-12));
    CHECK(twice == doctest::Approx((base + dup) / (tokens + task.step_act_tokens)).epsilon(1e-12));
}

TEST_CASE("sft gradient matches finite differences") {
    for (std::uint64_t s = 0; s < 10; ++s) {
        const PolicyParams p = random_params(kTask, rng::derive(s, 0x5f7), 2.0);
        const auto ro = rollout_with_timeout(kTask, p, 6.0, s);
        if (ro.records.empty()) continue;
        std::vector<WindowSample> ws;
        for (const auto& sub : split_trajectory(ro.traj, split_cfg(4, 1, s % 2 == 0)))
            ws.push_back(attach_records(sub, ro.records));
        const auto grad = sft_loss_gradient(p, ws);
        check_gradient(p, grad, [&](const PolicyParams& q) { return sft_loss(q, ws); });
    }
}

TEST_CASE("sft with nothing unmasked is an error") {
    WindowSample w = window({{0, 0, 1}});
    w.sub.loss_mask[0] = 0;
    try {
        sft_loss(zero_params(kTask), {w});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_loss_mask);
    }
    CHECK_THROWS_AS(sft_loss_gradient(zero_params(kTask), {w}), Error);
}

TEST_CASE("group advantages: constant rewards vanish") {
    GroupBatch b;
    b.rollouts = {{window({{0, 0, 0}})}, {window({{0, 0, 1}})}};
    b.rewards = {{0.7}, {0.7}};
    const auto adv = group_advantages(b);
    CHECK(adv[0][0] == 0.0);
    CHECK(adv[1][0] == 0.0);
}

TEST_CASE("group advantages: two rollouts of two windows") {
    GroupBatch b;
    b.rollouts = {{window({{0, 0, 0}}), window({{0, 0, 1}})},
                  {window({{1, 0, 0}}), window({{1, 0, 1}})}};
    b.rewards = {{1.0, 0.0}, {0.0, 1.0}};
    const auto adv = group_advantages(b);
    CHECK(adv[0][0] == 0.5);
    CHECK(adv[0][1] == -0.5);
    CHECK(adv[1][0] == -0.5);
    CHECK(adv[1][1] == 0.5);
}

TEST_CASE("group advantages: a single window is its own mean") {
    GroupBatch b;
    b.rollouts = {{window({{0, 0, 0}})}};
    b.rewards = {{0.42}};
    CHECK(group_advantages(b)[0][0] == 0.0);
}

TEST_CASE("group advantages sum to zero on ragged random groups") {
    for (std::uint64_t s = 0; s < 300; ++s) {
        const std::uint64_t key = rng::derive(s, 0xadf5);
        GroupBatch b;
        std::uint64_t c = 0;
        const int n = 1 + rng::uniform_int(key, c++, 4);
        size_t windows = 0;
        for (int j = 0; j < n; ++j) {
            const int k = rng::uniform_int(key, c++, 5); // some rollouts empty
            b.rollouts.emplace_back();
            b.rewards.emplace_back();
            for (int i = 0; i < k; ++i) {
                b.rollouts.back().push_back(window({{0, 0, 0}}));
                b.rewards.back().push_back(rng::uniform(key, c++, -2.0, 2.0));
                ++windows;
            }
        }
        if (windows == 0) continue;
        const auto adv = group_advantages(b);
        double sum = 0.0;
        for (const auto& row : adv)
            for (double a : row) sum += a;
        CHECK(std::abs(sum) <= 1e-12 * static_cast<double>(windows));
    }
}

TEST_CASE("likelihood ratio basics") {
    const PolicyParams p = one_state({0.0, 0.0});
    const auto ref = make_reference(p);
    CHECK(likelihood_ratio(p, ref, 0, 0, 0) == 1.0);
    CHECK(likelihood_ratio(p, ref, 0, 0, 1) == 1.0);

    // ref puts 1/4 on action 0, params put 1/2: ratio exactly doubles
    const PolicyParams q = one_state({0.0, std::log(3.0)});
    const auto ref_q = make_reference(q);
    CHECK(likelihood_ratio(p, ref_q, 0, 0, 0) == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(likelihood_ratio(p, ref_q, 0, 0, 0) * likelihood_ratio(q, make_reference(p), 0, 0, 0) ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("clipped loss vanishes at the reference under symmetric advantages") {
    const PolicyParams p = random_params(kTask, 5, 1.0);
    const auto ref = make_reference(p);
    GroupBatch b;
    b.rollouts = {{window({{0, 0, 0}}), window({{0, 1, 1}})},
                  {window({{1, 0, 2}}), window({{1, 1, 3}})}};
    b.rewards = {{1.0, 0.0}, {0.0, 1.0}};
    CHECK(clipped_rl_loss(p, ref, b, hyper(0.2, 0.0)) == 0.0);
    // and the KL term is zero at the reference regardless of its weight
    CHECK(clipped_rl_loss(p, ref, b, hyper(0.2, 5.0)) == 0.0);
}

TEST_CASE("clip arithmetic: positive advantage with ratio 2 caps at 1.2") {
    // params give action 0 probability 1/2, ref gives 1/4 -> ratio 2.
    const PolicyParams p = one_state({0.0, 0.0});
    const auto ref = make_reference(one_state({0.0, std::log(3.0)}));
    GroupBatch b;
    WindowSample masked = window({{0, 0, 0}});
    masked.sub.loss_mask[0] = 0; // advantage carrier only
    b.rollouts = {{window({{0, 0, 0}})}, {masked}};
    b.rewards = {{1.0}, {-1.0}}; // mean 0: advantages +1 and -1
    // term = min(2*1, 1.2*1) = 1.2 on one token; second window contributes
    // no tokens; W = 2 -> loss = -1.2 / 2
    const double loss = clipped_rl_loss(p, ref, b, hyper(0.2, 0.0));
    CHECK(2.0 * loss == doctest::Approx(-1.2).epsilon(1e-12));

    // negative advantage is NOT rescued by the clip: min picks r*adv = -2
    b.rewards = {{-1.0}, {1.0}};
    const double pessimistic = clipped_rl_loss(p, ref, b, hyper(0.2, 0.0));
    CHECK(2.0 * pessimistic == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("all-equal rewards with zero kl weight give a zero gradient") {
    const PolicyParams p = random_params(kTask, 9, 1.0);
    const auto ref = make_reference(random_params(kTask, 10, 1.0));
    GroupBatch b = make_batch(kTask, p, 3, 4.0, split_cfg(3, 1), 77);
    // 0.5 sums and centers exactly, so the advantages are bit-zero
    for (auto& row : b.rewards)
        for (double& q : row) q = 0.5;
    const auto grad = loss_gradient(p, ref, b, hyper(0.2, 0.0));
    for (double g : grad.logits) CHECK(g == 0.0);
}

TEST_CASE("gradient of the clipped loss matches finite differences") {
    int checked = 0;
    for (std::uint64_t s = 0; s < 12; ++s) {
        const PolicyParams p = random_params(kTask, rng::derive(s, 0x90ad), 1.2);
        const auto ref = make_reference(random_params(kTask, rng::derive(s, 0x9ef), 1.2));
        GroupBatch b = make_batch(kTask, p, 2 + static_cast<int>(s % 3), 5.0,
                                  split_cfg(3 + static_cast<int>(s % 2), 1, s % 2 == 0), s);
        size_t windows = 0;
        for (const auto& r : b.rollouts) windows += r.size();
        if (windows < 2) continue;

        // keep every ratio clear of the clip kink so the finite-difference
        // stencil stays on one branch
        double eps = 0.2 + 0.037 * static_cast<double>(s % 5);
        bool clear = false;
        while (!clear) {
            clear = true;
            for (const auto& rollout : b.rollouts)
                for (const auto& w : rollout)
                    for (const auto& r : w.step_states) {
                        const double ratio =
                            likelihood_ratio(p, ref, r.subtask, r.position, r.action);
                        if (std::abs(ratio - (1.0 - eps)) < 1e-3 ||
                            std::abs(ratio - (1.0 + eps)) < 1e-3)
                            clear = false;
                    }
            if (!clear) eps += 3e-3;
        }

        const RlHyperparams hp = hyper(eps, 0.1 * static_cast<double>(s % 4), s % 3 != 0);
        const auto grad = loss_gradient(p, ref, b, hp);
        check_gradient(p, grad,
                       [&](const PolicyParams& q) { return clipped_rl_loss(q, ref, b, hp); });
        ++checked;
    }
    CHECK(checked >= 8);
}

TEST_CASE("tokens on the clipped branch contribute zero policy gradient") {
    // ratio 2 with advantage +1 and eps 0.2: term frozen at 1.2
    const PolicyParams p = one_state({0.0, 0.0});
    const PolicyParams ref_p = one_state({0.0, std::log(3.0)});
    const auto ref = make_reference(ref_p);
    GroupBatch b;
    WindowSample masked = window({{0, 0, 0}});
    masked.sub.loss_mask[0] = 0;
    b.rollouts = {{window({{0, 0, 0}})}, {masked}};
    b.rewards = {{1.0}, {-1.0}};
    const auto grad = loss_gradient(p, ref, b, hyper(0.2, 0.0));
    for (double g : grad.logits) CHECK(g == 0.0);
    // finite differences agree: both stencil points stay on the flat branch
    for (size_t i = 0; i < p.logits.size(); ++i)
        CHECK(fd_partial(p, i, [&](const PolicyParams& q) {
                  return clipped_rl_loss(q, ref, b, hyper(0.2, 0.0));
              }) == 0.0);
}

TEST_CASE("a huge clip width recovers the plain importance-weighted surrogate") {
    const PolicyParams p = random_params(kTask, 31, 1.0);
    const auto ref = make_reference(random_params(kTask, 32, 1.0));
    const GroupBatch b = make_batch(kTask, p, 3, 5.0, split_cfg(3, 1), 99);
    const auto adv = group_advantages(b);
    size_t windows = 0;
    for (const auto& r : b.rollouts) windows += r.size();

    double expected = 0.0;
    for (size_t j = 0; j < b.rollouts.size(); ++j) {
        for (size_t i = 0; i < b.rollouts[j].size(); ++i) {
            double wsum = 0.0;
            long long wtok = 0;
            size_t off = 0;
            const auto& w = b.rollouts[j][i];
            for (size_t k = 0; k < w.sub.steps.size(); ++k) {
                for (int t = 0; t < w.sub.steps[k].act_tokens; ++t, ++off) {
                    if (!w.sub.loss_mask[off]) continue;
                    const auto& r = w.step_states[k];
                    wsum += likelihood_ratio(p, ref, r.subtask, r.position, r.action) * adv[j][i];
                    ++wtok;
                }
            }
            if (wtok > 0) wsum /= static_cast<double>(wtok);
            expected += wsum;
        }
    }
    expected = -expected / static_cast<double>(windows);
    CHECK(clipped_rl_loss(p, ref, b, hyper(1e6, 0.0)) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("kl term is nonnegative and zero only for matching distributions") {
    const ChainTask task = make_chain_task(2, 1, 3, 1.0, 0, 8.0);
    for (std::uint64_t s = 0; s < 20; ++s) {
        const PolicyParams p = random_params(task, rng::derive(s, 0xa), 1.5);
        PolicyParams q = random_params(task, rng::derive(s, 0xb), 1.5);
        GroupBatch b = make_batch(task, p, 2, 5.0, split_cfg(4, 1), s);
        size_t windows = 0;
        for (const auto& r : b.rollouts) windows += r.size();
        if (windows == 0) continue;
        for (auto& row : b.rewards)
            for (double& v : row) v = 0.5; // isolate the KL term
        const double pure_kl = clipped_rl_loss(p, make_reference(q), b, hyper(0.2, 1.0));
        CHECK(pure_kl > 0.0); // genuinely different policies at visited states
        CHECK(clipped_rl_loss(p, make_reference(p), b, hyper(0.2, 1.0)) == 0.0);

        // shifting a state's logits in q matches distributions there
        PolicyParams shifted = p;
        for (size_t i = 0; i < shifted.logits.size(); ++i) shifted.logits[i] += 3.25;
        CHECK(clipped_rl_loss(p, make_reference(shifted), b, hyper(0.2, 1.0)) ==
              doctest::Approx(0.0).epsilon(1e-12));
    }
}

TEST_CASE("per-state logit shifts in params and ref leave the loss unchanged") {
    const PolicyParams p = random_params(kTask, 51, 1.0);
    const PolicyParams r = random_params(kTask, 52, 1.0);
    const GroupBatch b = make_batch(kTask, p, 3, 5.0, split_cfg(3, 1), 7);
    const RlHyperparams hp = hyper(0.2, 0.3);
    const double base = clipped_rl_loss(p, make_reference(r), b, hp);

    PolicyParams p2 = p;
    PolicyParams r2 = r;
    for (int d = 0; d < kTask.n_subtasks; ++d)
        for (int pos = 0; pos < kTask.actions_per_subtask; ++pos) {
            const double c = rng::uniform(rng::derive(77, d, pos), 0, -7.0, 7.0);
            const double cref = rng::uniform(rng::derive(78, d, pos), 0, -7.0, 7.0);
            for (int a = 0; a < kTask.vocab_size; ++a) {
                p2.at(d, pos, a) += c;
                r2.at(d, pos, a) += cref;
            }
        }
    CHECK(clipped_rl_loss(p2, make_reference(r2), b, hp) ==
          doctest::Approx(base).epsilon(1e-10));
}

TEST_CASE("raw-sum mode skips the per-window token normalization") {
    const PolicyParams p = random_params(kTask, 61, 1.0);
    const auto ref = make_reference(random_params(kTask, 62, 1.0));
    const GroupBatch b = make_batch(kTask, p, 2, 5.0, split_cfg(4, 2), 13);
    const auto adv = group_advantages(b);
    size_t windows = 0;
    double expected = 0.0;
    for (size_t j = 0; j < b.rollouts.size(); ++j) {
        for (size_t i = 0; i < b.rollouts[j].size(); ++i) {
            ++windows;
            const auto& w = b.rollouts[j][i];
            size_t off = 0;
            for (size_t k = 0; k < w.sub.steps.size(); ++k)
                for (int t = 0; t < w.sub.steps[k].act_tokens; ++t, ++off)
                    if (w.sub.loss_mask[off]) {
                        const auto& rec = w.step_states[k];
                        const double ratio =
                            likelihood_ratio(p, ref, rec.subtask, rec.position, rec.action);
                        const double clipped = std::clamp(ratio, 0.8, 1.2);
                        expected += std::min(ratio * adv[j][i], clipped * adv[j][i]);
                    }
        }
    }
    expected = -expected / static_cast<double>(windows);
    CHECK(clipped_rl_loss(p, ref, b, hyper(0.2, 0.0, false)) ==
          doctest::Approx(expected).epsilon(1e-12));

    // gradient in raw-sum mode still matches finite differences
    const auto grad = loss_gradient(p, ref, b, hyper(0.2, 0.0, false));
    check_gradient(p, grad, [&](const PolicyParams& q) {
        return clipped_rl_loss(q, ref, b, hyper(0.2, 0.0, false));
    });
}

TEST_CASE("batch shape errors") {
    const PolicyParams p = zero_params(kTask);
    const auto ref = make_reference(p);
    GroupBatch empty;
    try {
        clipped_rl_loss(p, ref, empty, hyper(0.2, 0.0));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_batch);
    }

    GroupBatch no_windows;
    no_windows.rollouts = {{}, {}};
    no_windows.rewards = {{}, {}};
    CHECK_THROWS_AS(group_advantages(no_windows), Error);

    GroupBatch mismatched;
    mismatched.rollouts = {{window({{0, 0, 0}})}};
    mismatched.rewards = {{1.0, 2.0}};
    try {
        loss_gradient(p, ref, mismatched, hyper(0.2, 0.0));
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::length_mismatch);
    }
}
