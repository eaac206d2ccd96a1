#include "longhaul/splitter.hpp"

#include <sstream>

#include "longhaul/errors.hpp"

namespace longhaul {

void SplitConfig::validate() const {
    if (max_context_tokens <= 0)
        throw Error(Errc::invalid_config, "max_context_tokens must be > 0");
    if (window_steps <= 0)
        throw Error(Errc::invalid_config, "window_steps must be > 0");
    if (overlap_steps < 0)
        throw Error(Errc::invalid_config, "overlap_steps must be >= 0");
    if (overlap_steps >= window_steps)
        throw Error(Errc::invalid_config, "overlap_steps must be < window_steps");
}

std::vector<int> SubTrajectory::supervised_steps() const {
    std::vector<int> out;
    size_t tok = 0;
    for (size_t i = 0; i < steps.size(); ++i) {
        bool any = false;
        for (int t = 0; t < steps[i].act_tokens; ++t)
            if (loss_mask[tok++]) any = true;
        if (any) out.push_back(kept_from + static_cast<int>(i));
    }
    return out;
}

std::vector<Window> plan_splits(int n_regular_steps, const SplitConfig& config) {
    config.validate();
    if (n_regular_steps < 0)
        throw Error(Errc::invalid_config, "n_regular_steps must be >= 0");

    const int n = n_regular_steps;
    const int len = config.window_steps;
    std::vector<Window> windows;
    if (n == 0) return windows;
    if (n <= len) {
        windows.push_back({1, n});
        return windows;
    }

    const int stride = len - config.overlap_steps;
    int start = 1;
    while (start + len - 1 < n) {
        windows.push_back({start, start + len - 1});
        start += stride;
    }
    // Final window is end-aligned: clamp the start so the window ends at n.
    windows.push_back({n - len + 1, n});
    return windows;
}

namespace {

int prefix_tokens_of(const Trajectory& traj, int prefix_count) {
    int total = 0;
    for (int i = 0; i < prefix_count; ++i) total += token_length(traj.steps[i]);
    return total;
}

} // namespace

SubTrajectory materialize_subtrajectory(const Trajectory& traj, Window window,
                                        const SplitConfig& config,
                                        const std::set<int>& earlier_supervised,
                                        const std::string& parent_id) {
    config.validate();
    const int prefix_count = prefix_step_count(traj);
    const int n_regular = static_cast<int>(traj.steps.size()) - prefix_count;
    if (window.start < 1 || window.end > n_regular || window.start > window.end)
        throw Error(Errc::index_out_of_range,
                    "window (" + std::to_string(window.start) + "," + std::to_string(window.end) +
                        ") outside 1.." + std::to_string(n_regular));

    const int prefix_tokens = prefix_tokens_of(traj, prefix_count);
    if (prefix_tokens >= config.max_context_tokens)
        throw Error(Errc::prefix_too_large,
                    "pinned prefix has " + std::to_string(prefix_tokens) + " tokens, budget " +
                        std::to_string(config.max_context_tokens));

    // Regular step k (1-based) lives at traj.steps[prefix_count + k - 1].
    auto regular = [&](int k) -> const Step& { return traj.steps[prefix_count + k - 1]; };

    int window_tokens = 0;
    for (int k = window.start; k <= window.end; ++k) window_tokens += token_length(regular(k));

    // Progressive truncation: drop from the front until the budget is met.
    int kept_from = window.start;
    while (prefix_tokens + window_tokens > config.max_context_tokens && kept_from < window.end) {
        window_tokens -= token_length(regular(kept_from));
        ++kept_from;
    }
    if (prefix_tokens + window_tokens > config.max_context_tokens)
        throw Error(Errc::empty_window, "token budget admits no step of window (" +
                                            std::to_string(window.start) + "," +
                                            std::to_string(window.end) + ")");

    SubTrajectory sub;
    sub.parent_id = parent_id;
    sub.start_step = window.start;
    sub.end_step = window.end;
    sub.kept_from = kept_from;
    sub.pinned_prefix.assign(traj.steps.begin(), traj.steps.begin() + prefix_count);
    for (int k = kept_from; k <= window.end; ++k) {
        const Step& s = regular(k);
        sub.steps.push_back(s);
        const bool supervised =
            !(config.dedup_loss_on_overlap && earlier_supervised.count(k) > 0);
        sub.loss_mask.insert(sub.loss_mask.end(), s.act_tokens, supervised ? 1 : 0);
    }
    return sub;
}

std::vector<SubTrajectory> split_trajectory(const Trajectory& traj, const SplitConfig& config,
                                            const std::string& parent_id) {
    const int prefix_count = prefix_step_count(traj);
    const int n_regular = static_cast<int>(traj.steps.size()) - prefix_count;
    std::vector<SubTrajectory> subs;
    std::set<int> supervised;
    for (Window w : plan_splits(n_regular, config)) {
        SubTrajectory sub = materialize_subtrajectory(traj, w, config, supervised, parent_id);
        for (int k : sub.supervised_steps()) supervised.insert(k);
        subs.push_back(std::move(sub));
    }
    return subs;
}

CoverageReport coverage_report(const Trajectory& traj, const std::vector<SubTrajectory>& subs) {
    const int prefix_count = prefix_step_count(traj);
    const int n_regular = static_cast<int>(traj.steps.size()) - prefix_count;

    // Flattened token offsets per regular step.
    std::vector<int> offset(n_regular + 1, 0);
    for (int k = 1; k <= n_regular; ++k)
        offset[k] = offset[k - 1] + traj.steps[prefix_count + k - 1].act_tokens;

    CoverageReport report;
    report.token_multiplicity.assign(offset[n_regular], 0);
    report.step_multiplicity.assign(n_regular, 0);
    for (const SubTrajectory& sub : subs) {
        size_t tok = 0;
        for (size_t i = 0; i < sub.steps.size(); ++i) {
            const int k = sub.kept_from + static_cast<int>(i);
            for (int t = 0; t < sub.steps[i].act_tokens; ++t) {
                if (sub.loss_mask[tok]) ++report.token_multiplicity[offset[k - 1] + t];
                ++tok;
            }
        }
    }
    for (int k = 1; k <= n_regular; ++k) {
        int step_mult = 0;
        for (int t = offset[k - 1]; t < offset[k]; ++t) {
            step_mult = std::max(step_mult, report.token_multiplicity[t]);
            if (report.token_multiplicity[t] == 0) report.uncovered_tokens.push_back(t);
            if (report.token_multiplicity[t] > 1) report.duplicated_tokens.push_back(t);
        }
        report.step_multiplicity[k - 1] = step_mult;
    }
    return report;
}

std::string format_split_plan(const std::vector<SubTrajectory>& subs) {
    std::ostringstream out;
    for (const SubTrajectory& sub : subs)
        out << sub.parent_id << ' ' << sub.start_step << ' ' << sub.end_step << ' '
            << sub.kept_count() << "\n";
    return out.str();
}

} // namespace longhaul
