#include "longhaul/trainer.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "longhaul/errors.hpp"
#include "longhaul/rng.hpp"
#include "longhaul/rubric.hpp"
#include "longhaul/text.hpp"

namespace longhaul {

StageSchedule build_schedule(const std::vector<double>& timeouts, const std::vector<int>& iters,
                             int group_size) {
    if (timeouts.size() != iters.size())
        throw Error(Errc::length_mismatch, "timeouts and iterations_per_stage differ in length");
    if (group_size < 1) throw Error(Errc::non_positive_entries, "group size must be >= 1");
    for (double t : timeouts)
        if (!(t > 0)) throw Error(Errc::non_positive_entries, "stage timeouts must be positive");
    for (int it : iters)
        if (it < 1) throw Error(Errc::non_positive_entries, "iterations per stage must be >= 1");
    for (size_t m = 1; m < timeouts.size(); ++m)
        if (!(timeouts[m] > timeouts[m - 1]))
            throw Error(Errc::non_increasing_timeouts,
                        "stage timeouts must strictly increase (" +
                            text::format_double(timeouts[m - 1]) + " then " +
                            text::format_double(timeouts[m]) + ")");
    StageSchedule s;
    s.timeouts = timeouts;
    s.iterations_per_stage = iters;
    s.group_sizes.assign(timeouts.size(), group_size);
    return s;
}

void TrainRunMetrics::append(const MetricRecord& r) {
    if (!records.empty() && r.iteration <= records.back().iteration)
        throw Error(Errc::invalid_config, "metric iterations must strictly increase");
    records.push_back(r);
}

std::string encode_metrics(const TrainRunMetrics& metrics) {
    std::ostringstream out;
    out << "mxv1\n";
    for (const auto& r : metrics.records)
        out << r.iteration << " " << r.stage << " " << text::format_double(r.q_mean) << " "
            << text::format_double(r.turns_mean) << " " << text::format_double(r.entropy) << " "
            << text::format_double(r.loss) << "\n";
    return out.str();
}

TrainRunMetrics decode_metrics(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || text::split_ws(line) != std::vector<std::string>{"mxv1"})
        throw Error(Errc::parse_error, "expected 'mxv1' header");
    TrainRunMetrics metrics;
    while (std::getline(in, line)) {
        auto f = text::split_ws(line);
        if (f.empty()) continue;
        if (f.size() != 6) throw Error(Errc::parse_error, "bad metrics line '" + line + "'");
        MetricRecord r;
        r.iteration = static_cast<int>(text::parse_int(f[0]));
        r.stage = static_cast<int>(text::parse_int(f[1]));
        r.q_mean = text::parse_double(f[2]);
        r.turns_mean = text::parse_double(f[3]);
        r.entropy = text::parse_double(f[4]);
        r.loss = text::parse_double(f[5]);
        metrics.append(r);
    }
    return metrics;
}

void write_metrics_file(const TrainRunMetrics& metrics, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    out << encode_metrics(metrics);
    if (!out) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

TrainRunMetrics read_metrics_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_metrics(buf.str());
}

EvalSummary evaluate(const PolicyParams& params, const ChainTask& task, double timeout, int n_eval,
                     std::uint64_t seed, ActionMode mode) {
    if (n_eval < 1) throw Error(Errc::empty_evaluation, "n_eval must be >= 1");
    EvalSummary s;
    for (int i = 0; i < n_eval; ++i) {
        auto ro = rollout_with_timeout(task, params, timeout, rng::derive(seed, i), nullptr, mode);
        s.q_mean += score_rubric(task.rubric, ro.final_snapshot).score;
        s.turns_mean += static_cast<double>(ro.records.size());
    }
    s.q_mean /= n_eval;
    s.turns_mean /= n_eval;
    s.entropy = policy_entropy(params);
    return s;
}

std::vector<RolloutResult> make_demonstrations(const ChainTask& task, int count,
                                               std::uint64_t seed) {
    const PolicyParams expert = expert_params(task, 1000.0);
    std::vector<RolloutResult> demos;
    demos.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i)
        demos.push_back(rollout_with_timeout(task, expert, task.time_budget, rng::derive(seed, i),
                                             nullptr, ActionMode::greedy));
    return demos;
}

namespace {

void apply_step(PolicyParams& params, const PolicyParams& grad, double lr) {
    for (size_t i = 0; i < params.logits.size(); ++i) params.logits[i] -= lr * grad.logits[i];
}

std::vector<WindowSample> split_rollout(const RolloutResult& ro, const SplitConfig& config,
                                        const std::string& parent_id) {
    std::vector<WindowSample> out;
    for (auto& sub : split_trajectory(ro.traj, config, parent_id))
        out.push_back(attach_records(std::move(sub), ro.records));
    return out;
}

} // namespace

TrainResult run_training(const ChainTask& task, const std::vector<RolloutResult>& sft_data,
                         const StageSchedule& schedule, const SplitConfig& split_config,
                         const RlHyperparams& hp, std::uint64_t seed, const TrainOptions& options,
                         TrainObserver* observer) {
    validate_task(task);
    split_config.validate();

    TrainResult result;
    result.params = zero_params(task);
    int iteration = 0;

    if (!sft_data.empty() && options.sft_steps > 0) {
        std::vector<WindowSample> windows;
        for (size_t d = 0; d < sft_data.size(); ++d)
            for (auto& w : split_rollout(sft_data[d], split_config, "demo" + std::to_string(d)))
                windows.push_back(std::move(w));

        const int stride = options.sft_record_every > 0 ? options.sft_record_every : 1;
        for (int step = 0; step < options.sft_steps; ++step) {
            const double loss = sft_loss(result.params, windows);
            if (observer) observer->on_sft_step(step, loss, result.params);
            if (step % stride == 0) {
                auto ev = evaluate(result.params, task, task.time_budget, options.n_eval,
                                   rng::derive(seed, 0xe5f7, step));
                result.metrics.append(
                    {iteration++, 0, ev.q_mean, ev.turns_mean, ev.entropy, loss});
            }
            apply_step(result.params, sft_loss_gradient(result.params, windows),
                       options.sft_learning_rate);
        }
        // closing row so the log carries the post-warm-start state
        const double loss = sft_loss(result.params, windows);
        auto ev = evaluate(result.params, task, task.time_budget, options.n_eval,
                           rng::derive(seed, 0xe5f7, options.sft_steps));
        result.metrics.append({iteration++, 0, ev.q_mean, ev.turns_mean, ev.entropy, loss});
    }

    for (int m = 0; m < schedule.stages(); ++m) {
        const double timeout = schedule.timeouts[static_cast<size_t>(m)];
        const int n = schedule.group_sizes[static_cast<size_t>(m)];
        for (int iter = 0; iter < schedule.iterations_per_stage[static_cast<size_t>(m)]; ++iter) {
            const ReferenceSnapshot ref = make_reference(result.params);
            const std::uint64_t batch_seed = rng::derive(seed, 0xb47c, m, iter);

            GroupBatch batch;
            batch.stage_index = m + 1;
            size_t total_windows = 0;
            for (int j = 0; j < n; ++j) {
                auto ro = rollout_with_timeout(task, result.params, timeout,
                                               rng::derive(batch_seed, j));
                const double q = score_rubric(task.rubric, ro.final_snapshot).score;
                auto windows = split_rollout(ro, split_config, "r" + std::to_string(j));
                total_windows += windows.size();
                batch.rewards.emplace_back(windows.size(), q);
                batch.rollouts.push_back(std::move(windows));
            }
            if (total_windows == 0) break; // nothing survived the timeout; end the stage

            const double loss = clipped_rl_loss(result.params, ref, batch, hp);
            if (observer) {
                RlIterationInfo info;
                info.stage = m + 1;
                info.iteration_in_stage = iter;
                info.batch_seed = batch_seed;
                info.batch = &batch;
                info.params_at_start = &result.params;
                info.ref = &ref;
                info.loss = loss;
                observer->on_rl_iteration(info);
            }
            if (total_windows > 1) { // single-window groups carry zero advantage
                for (int g = 0; g < options.gradient_steps_per_iteration; ++g)
                    apply_step(result.params, loss_gradient(result.params, ref, batch, hp),
                               options.rl_learning_rate);
            }

            auto ev = evaluate(result.params, task, timeout, options.n_eval,
                               rng::derive(seed, 0xea17, m, iter));
            result.metrics.append(
                {iteration++, m + 1, ev.q_mean, ev.turns_mean, ev.entropy, loss});
        }
    }
    return result;
}

} // namespace longhaul
