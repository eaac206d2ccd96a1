#include "longhaul/chain_env.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "longhaul/errors.hpp"
#include "longhaul/rng.hpp"
#include "longhaul/text.hpp"

namespace longhaul {

int ChainTask::state_index(int subtask, int position) const {
    return subtask * actions_per_subtask + position;
}

int ChainTask::correct_at(int subtask, int position) const {
    return correct_action[static_cast<size_t>(state_index(subtask, position))];
}

void validate_task(const ChainTask& task) {
    if (task.n_subtasks < 1) throw Error(Errc::invalid_config, "n_subtasks must be >= 1");
    if (task.actions_per_subtask < 1)
        throw Error(Errc::invalid_config, "actions_per_subtask must be >= 1");
    if (task.vocab_size < 2) throw Error(Errc::invalid_config, "vocab_size must be >= 2");
    if (task.prefix_steps < 0) throw Error(Errc::invalid_config, "prefix_steps must be >= 0");
    if (!(task.time_budget > 0)) throw Error(Errc::invalid_config, "time_budget must be positive");
    if (task.correct_action.size() != static_cast<size_t>(task.state_count()))
        throw Error(Errc::invalid_config, "correct_action table must have one entry per state");
    for (int a : task.correct_action)
        if (a < 0 || a >= task.vocab_size)
            throw Error(Errc::invalid_config, "correct action id outside vocabulary");
    if (task.action_time_cost.size() != static_cast<size_t>(task.vocab_size))
        throw Error(Errc::invalid_config, "action_time_cost must have one entry per action");
    for (double c : task.action_time_cost)
        if (!(c > 0) || !std::isfinite(c))
            throw Error(Errc::invalid_config, "action time costs must be positive and finite");
    if (task.prefix_obs_tokens < 0 || task.step_obs_tokens < 0 || task.step_act_tokens < 1)
        throw Error(Errc::invalid_config, "step token sizes must be nonnegative (>=1 action tokens)");

    auto report = validate_rubric(task.rubric);
    if (!report.ok()) throw Error(Errc::invalid_config, "rubric: " + report.violations.front());
    int leaves = 0;
    // count leaves iteratively; trees are tiny
    std::vector<const RubricNode*> stack{&task.rubric};
    while (!stack.empty()) {
        const RubricNode* n = stack.back();
        stack.pop_back();
        if (n->is_leaf()) ++leaves;
        for (const auto& c : n->children) stack.push_back(&c);
    }
    if (leaves != task.n_subtasks)
        throw Error(Errc::invalid_config, "rubric must have exactly one leaf per subtask");
}

ChainTask make_chain_task(int n_subtasks, int actions_per_subtask, int vocab_size,
                          double action_cost, int prefix_steps, double time_budget) {
    ChainTask task;
    task.n_subtasks = n_subtasks;
    task.actions_per_subtask = actions_per_subtask;
    task.vocab_size = vocab_size;
    task.prefix_steps = prefix_steps;
    task.time_budget = time_budget;
    task.correct_action.resize(static_cast<size_t>(n_subtasks) * actions_per_subtask);
    for (int d = 0; d < n_subtasks; ++d)
        for (int p = 0; p < actions_per_subtask; ++p)
            task.correct_action[static_cast<size_t>(task.state_index(d, p))] =
                (d + p) % vocab_size;
    task.action_time_cost.assign(static_cast<size_t>(vocab_size), action_cost);
    task.rubric = make_chain_rubric(n_subtasks);
    validate_task(task);
    return task;
}

double& PolicyParams::at(int subtask, int position, int action) {
    return logits[static_cast<size_t>((subtask * actions_per_subtask + position) * vocab_size +
                                      action)];
}

double PolicyParams::at(int subtask, int position, int action) const {
    return logits[static_cast<size_t>((subtask * actions_per_subtask + position) * vocab_size +
                                      action)];
}

PolicyParams zero_params(const ChainTask& task) {
    PolicyParams p;
    p.n_subtasks = task.n_subtasks;
    p.actions_per_subtask = task.actions_per_subtask;
    p.vocab_size = task.vocab_size;
    p.logits.assign(static_cast<size_t>(p.state_count()) * p.vocab_size, 0.0);
    return p;
}

PolicyParams expert_params(const ChainTask& task, double scale) {
    PolicyParams p = zero_params(task);
    for (int d = 0; d < task.n_subtasks; ++d)
        for (int pos = 0; pos < task.actions_per_subtask; ++pos)
            p.at(d, pos, task.correct_at(d, pos)) = scale;
    return p;
}

PolicyParams random_params(const ChainTask& task, std::uint64_t seed, double scale) {
    PolicyParams p = zero_params(task);
    const std::uint64_t key = rng::derive(seed, 0x1091);
    for (size_t i = 0; i < p.logits.size(); ++i)
        p.logits[i] = rng::uniform(key, i, -scale, scale);
    return p;
}

ReferenceSnapshot make_reference(const PolicyParams& params) { return ReferenceSnapshot{params}; }

namespace {

void check_state(const PolicyParams& params, int subtask, int position) {
    if (subtask < 0 || subtask >= params.n_subtasks || position < 0 ||
        position >= params.actions_per_subtask)
        throw Error(Errc::index_out_of_range,
                    "state (" + std::to_string(subtask) + "," + std::to_string(position) +
                        ") outside policy table");
}

// log softmax denominator at one state, stabilized by the max logit
double log_sum_exp(const PolicyParams& params, int subtask, int position, double* max_out) {
    double m = params.at(subtask, position, 0);
    for (int a = 1; a < params.vocab_size; ++a) m = std::max(m, params.at(subtask, position, a));
    double s = 0.0;
    for (int a = 0; a < params.vocab_size; ++a)
        s += std::exp(params.at(subtask, position, a) - m);
    if (max_out) *max_out = m;
    return m + std::log(s);
}

} // namespace

double policy_logprob(const PolicyParams& params, int subtask, int position, int action) {
    check_state(params, subtask, position);
    if (action < 0 || action >= params.vocab_size)
        throw Error(Errc::index_out_of_range, "action " + std::to_string(action) + " outside vocabulary");
    return params.at(subtask, position, action) - log_sum_exp(params, subtask, position, nullptr);
}

std::vector<double> policy_probs(const PolicyParams& params, int subtask, int position) {
    check_state(params, subtask, position);
    const double lse = log_sum_exp(params, subtask, position, nullptr);
    std::vector<double> probs(static_cast<size_t>(params.vocab_size));
    for (int a = 0; a < params.vocab_size; ++a)
        probs[static_cast<size_t>(a)] = std::exp(params.at(subtask, position, a) - lse);
    return probs;
}

double policy_entropy(const PolicyParams& params) {
    double total = 0.0;
    for (int d = 0; d < params.n_subtasks; ++d) {
        for (int pos = 0; pos < params.actions_per_subtask; ++pos) {
            auto probs = policy_probs(params, d, pos);
            double h = 0.0;
            for (double p : probs)
                if (p > 0) h -= p * std::log(p);
            total += h;
        }
    }
    return total / params.state_count();
}

RolloutResult rollout_with_timeout(const ChainTask& task, const PolicyParams& params,
                                   double timeout, std::uint64_t seed,
                                   const RolloutResult* resume_from, ActionMode mode) {
    RolloutResult out;
    int subtask = 0, position = 0;
    double time_used = 0.0;
    if (resume_from) {
        out.traj = resume_from->traj;
        out.records = resume_from->records;
        subtask = resume_from->final_snapshot.subtasks_completed;
        position = resume_from->final_snapshot.position;
        time_used = resume_from->final_snapshot.time_used;
    } else {
        for (int i = 0; i < task.prefix_steps; ++i)
            out.traj.steps.push_back(Step{StepKind::prefix, task.prefix_obs_tokens, 0, 0.0});
    }

    const std::uint64_t stream = rng::derive(seed, 0xac710);
    while (subtask < task.n_subtasks) {
        int action;
        if (mode == ActionMode::greedy) {
            action = 0;
            for (int a = 1; a < task.vocab_size; ++a)
                if (params.at(subtask, position, a) > params.at(subtask, position, action))
                    action = a;
        } else {
            auto probs = policy_probs(params, subtask, position);
            // draw index = count of actions taken so far, fresh or resumed
            const double u = rng::uniform(stream, out.records.size());
            action = rng::categorical(probs, u);
        }
        const double cost = task.action_time_cost[static_cast<size_t>(action)];
        if (time_used + cost > timeout) break; // the step that would exceed is not taken
        out.records.push_back(StepRecord{subtask, position, action});
        out.traj.steps.push_back(
            Step{StepKind::regular, task.step_obs_tokens, task.step_act_tokens, cost});
        time_used += cost;
        if (action == task.correct_at(subtask, position)) {
            if (++position == task.actions_per_subtask) {
                position = 0;
                ++subtask;
            }
        }
    }

    out.final_snapshot = EnvSnapshot{subtask, task.n_subtasks, position,
                                     static_cast<int>(out.records.size()), time_used};
    out.traj.env_seed = static_cast<int64_t>(seed);
    out.traj.terminal_snapshot_id = encode_snapshot_id(out.final_snapshot);
    return out;
}

std::string encode_task(const ChainTask& task) {
    std::ostringstream out;
    out << "tkv1\n";
    out << "subtasks " << task.n_subtasks << "\n";
    out << "actions_per_subtask " << task.actions_per_subtask << "\n";
    out << "vocab " << task.vocab_size << "\n";
    out << "prefix_steps " << task.prefix_steps << "\n";
    out << "time_budget " << text::format_double(task.time_budget) << "\n";
    out << "prefix_obs_tokens " << task.prefix_obs_tokens << "\n";
    out << "step_obs_tokens " << task.step_obs_tokens << "\n";
    out << "step_act_tokens " << task.step_act_tokens << "\n";
    for (int a = 0; a < task.vocab_size; ++a)
        out << "cost " << a << " " << text::format_double(task.action_time_cost[static_cast<size_t>(a)])
            << "\n";
    for (int d = 0; d < task.n_subtasks; ++d)
        for (int p = 0; p < task.actions_per_subtask; ++p)
            out << "correct " << d << " " << p << " " << task.correct_at(d, p) << "\n";
    if (task.rubric == make_chain_rubric(task.n_subtasks)) {
        out << "rubric chain\n";
    } else {
        throw Error(Errc::invalid_config,
                    "only the per-subtask chain rubric can be embedded; use write_task_file");
    }
    return out.str();
}

ChainTask decode_task(const std::string& content, const std::string& base_dir) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || text::split_ws(line) != std::vector<std::string>{"tkv1"})
        throw Error(Errc::parse_error, "expected 'tkv1' header");

    ChainTask task;
    task.correct_action.clear();
    task.action_time_cost.clear();
    std::vector<std::array<long long, 3>> corrects;
    std::vector<std::pair<long long, double>> costs;
    bool have_rubric = false;
    while (std::getline(in, line)) {
        auto f = text::split_ws(line);
        if (f.empty() || f[0][0] == '#') continue;
        if (f[0] == "subtasks" && f.size() == 2) {
            task.n_subtasks = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "actions_per_subtask" && f.size() == 2) {
            task.actions_per_subtask = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "vocab" && f.size() == 2) {
            task.vocab_size = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "prefix_steps" && f.size() == 2) {
            task.prefix_steps = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "time_budget" && f.size() == 2) {
            task.time_budget = text::parse_double(f[1]);
        } else if (f[0] == "prefix_obs_tokens" && f.size() == 2) {
            task.prefix_obs_tokens = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "step_obs_tokens" && f.size() == 2) {
            task.step_obs_tokens = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "step_act_tokens" && f.size() == 2) {
            task.step_act_tokens = static_cast<int>(text::parse_int(f[1]));
        } else if (f[0] == "cost" && f.size() == 3) {
            costs.emplace_back(text::parse_int(f[1]), text::parse_double(f[2]));
        } else if (f[0] == "correct" && f.size() == 4) {
            corrects.push_back({text::parse_int(f[1]), text::parse_int(f[2]), text::parse_int(f[3])});
        } else if (f[0] == "rubric" && f.size() >= 2) {
            if (f[1] == "chain" && f.size() == 2) {
                task.rubric = RubricNode{}; // resolved below, after subtasks is known
                have_rubric = true;
            } else if (f[1] == "file" && f.size() == 3) {
                std::filesystem::path p(f[2]);
                if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
                task.rubric = read_rubric_file(p.string());
                have_rubric = true;
            } else {
                throw Error(Errc::parse_error, "bad rubric reference '" + line + "'");
            }
        } else {
            throw Error(Errc::parse_error, "bad task line '" + line + "'");
        }
    }
    if (!have_rubric) throw Error(Errc::parse_error, "task file missing rubric line");
    if (task.rubric == RubricNode{}) task.rubric = make_chain_rubric(task.n_subtasks);

    if (task.n_subtasks < 1 || task.actions_per_subtask < 1 || task.vocab_size < 1)
        throw Error(Errc::parse_error, "task dimensions missing or invalid");
    task.action_time_cost.assign(static_cast<size_t>(task.vocab_size), 0.0);
    for (auto& [a, c] : costs) {
        if (a < 0 || a >= task.vocab_size) throw Error(Errc::parse_error, "cost action id out of range");
        task.action_time_cost[static_cast<size_t>(a)] = c;
    }
    task.correct_action.assign(static_cast<size_t>(task.state_count()), -1);
    for (auto& [d, p, a] : corrects) {
        if (d < 0 || d >= task.n_subtasks || p < 0 || p >= task.actions_per_subtask)
            throw Error(Errc::parse_error, "correct-action state out of range");
        task.correct_action[static_cast<size_t>(task.state_index(static_cast<int>(d),
                                                                 static_cast<int>(p)))] =
            static_cast<int>(a);
    }
    validate_task(task);
    return task;
}

void write_task_file(const std::string& path, const ChainTask& task) {
    std::string body;
    if (task.rubric == make_chain_rubric(task.n_subtasks)) {
        body = encode_task(task);
    } else {
        // non-canonical rubric: store it next to the task file and reference it
        ChainTask canonical = task;
        canonical.rubric = make_chain_rubric(task.n_subtasks);
        std::string rubric_path = path + ".rubric";
        write_rubric_file(task.rubric, rubric_path);
        body = encode_task(canonical);
        auto pos = body.rfind("rubric chain\n");
        body.replace(pos, std::string("rubric chain\n").size(),
                     "rubric file " + std::filesystem::path(rubric_path).filename().string() + "\n");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    out << body;
    if (!out) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

ChainTask read_task_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_task(buf.str(), std::filesystem::path(path).parent_path().string());
}

} // namespace longhaul
