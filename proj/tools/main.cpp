#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "longhaul/chain_env.hpp"
#include "longhaul/errors.hpp"
#include "longhaul/pipeline_sim.hpp"
#include "longhaul/rl_losses.hpp"
#include "longhaul/rng.hpp"
#include "longhaul/rubric.hpp"
#include "longhaul/splitter.hpp"
#include "longhaul/text.hpp"
#include "longhaul/trainer.hpp"
#include "longhaul/trajectory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace longhaul;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void spit(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    out << content;
    if (!out) throw Error(Errc::io_error, "write failed for '" + path + "'");
}

json parse_json_file(const std::string& path) {
    try {
        return json::parse(slurp(path));
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, path + ": " + e.what());
    }
}

// Missing keys keep struct defaults; wrong types surface as parse errors.
template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw Error(Errc::parse_error, std::string("config key '") + key + "': " + e.what());
    }
}

SplitConfig split_config_from_json(const json& j) {
    SplitConfig cfg;
    maybe(j, "max_context_tokens", cfg.max_context_tokens);
    maybe(j, "window_steps", cfg.window_steps);
    maybe(j, "overlap_steps", cfg.overlap_steps);
    maybe(j, "dedup_loss_on_overlap", cfg.dedup_loss_on_overlap);
    return cfg;
}

RlHyperparams hyperparams_from_json(const json& j) {
    RlHyperparams hp;
    maybe(j, "clip_epsilon", hp.clip_epsilon);
    maybe(j, "kl_weight", hp.kl_weight);
    maybe(j, "per_token_norm", hp.per_token_norm);
    return hp;
}

struct ExperimentConfig {
    std::string task_file;
    SplitConfig split;
    std::vector<double> stage_timeouts;
    std::vector<int> stage_iterations;
    int group_size = 8;
    RlHyperparams hp;
    TrainOptions train;
    int demonstrations = 4;
    std::uint64_t seed = 0;
    std::string out_dir = "out";
};

ExperimentConfig load_experiment_config(const std::string& path) {
    const json j = parse_json_file(path);
    ExperimentConfig cfg;
    maybe(j, "task_file", cfg.task_file);
    if (cfg.task_file.empty())
        throw Error(Errc::invalid_config, "config must name a task_file");
    // relative paths resolve against the config file's directory
    fs::path task_path(cfg.task_file);
    if (task_path.is_relative()) task_path = fs::path(path).parent_path() / task_path;
    cfg.task_file = task_path.string();
    if (!fs::exists(cfg.task_file))
        throw Error(Errc::invalid_config, "task_file '" + cfg.task_file + "' does not exist");

    if (j.contains("split")) cfg.split = split_config_from_json(j.at("split"));
    if (j.contains("schedule")) {
        const json& s = j.at("schedule");
        maybe(s, "timeouts", cfg.stage_timeouts);
        maybe(s, "iterations", cfg.stage_iterations);
        maybe(s, "group_size", cfg.group_size);
    }
    if (j.contains("hyperparams")) cfg.hp = hyperparams_from_json(j.at("hyperparams"));
    if (j.contains("train")) {
        const json& t = j.at("train");
        maybe(t, "sft_steps", cfg.train.sft_steps);
        maybe(t, "sft_learning_rate", cfg.train.sft_learning_rate);
        maybe(t, "rl_learning_rate", cfg.train.rl_learning_rate);
        maybe(t, "gradient_steps_per_iteration", cfg.train.gradient_steps_per_iteration);
        maybe(t, "n_eval", cfg.train.n_eval);
        maybe(t, "sft_record_every", cfg.train.sft_record_every);
        maybe(t, "demonstrations", cfg.demonstrations);
    }
    if (!j.contains("seed"))
        throw Error(Errc::invalid_config, "config must carry an explicit seed");
    cfg.seed = j.at("seed").get<std::uint64_t>();
    maybe(j, "out_dir", cfg.out_dir);
    cfg.hp.validate();
    return cfg;
}

ClusterSpec cluster_spec_from_json(const json& j) {
    ClusterSpec spec;
    maybe(j, "rollout_nodes", spec.rollout_nodes);
    maybe(j, "judge_workers", spec.judge_workers);
    maybe(j, "rollout_duration", spec.rollout_duration);
    maybe(j, "judge_service_time", spec.judge_service_time);
    maybe(j, "judge_requests_per_rollout", spec.judge_requests_per_rollout);
    maybe(j, "task_duration", spec.task_duration);
    maybe(j, "eval_requests_per_iteration", spec.eval_requests_per_iteration);
    maybe(j, "judge_failure_prob", spec.judge_failure_prob);
    return spec;
}

std::string encode_params(const PolicyParams& p) {
    std::ostringstream out;
    out << "pmv1\n";
    out << "dims " << p.n_subtasks << " " << p.actions_per_subtask << " " << p.vocab_size << "\n";
    for (int d = 0; d < p.n_subtasks; ++d) {
        for (int pos = 0; pos < p.actions_per_subtask; ++pos) {
            out << "state " << d << " " << pos;
            for (int a = 0; a < p.vocab_size; ++a)
                out << " " << text::format_double(p.at(d, pos, a));
            out << "\n";
        }
    }
    return out.str();
}

PolicyParams decode_params(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || text::split_ws(line) != std::vector<std::string>{"pmv1"})
        throw Error(Errc::parse_error, "expected 'pmv1' header");
    PolicyParams p;
    while (std::getline(in, line)) {
        auto f = text::split_ws(line);
        if (f.empty()) continue;
        if (f[0] == "dims" && f.size() == 4) {
            p.n_subtasks = static_cast<int>(text::parse_int(f[1]));
            p.actions_per_subtask = static_cast<int>(text::parse_int(f[2]));
            p.vocab_size = static_cast<int>(text::parse_int(f[3]));
            p.logits.assign(static_cast<size_t>(p.state_count()) * p.vocab_size, 0.0);
        } else if (f[0] == "state" && f.size() == 3 + static_cast<size_t>(p.vocab_size)) {
            const int d = static_cast<int>(text::parse_int(f[1]));
            const int pos = static_cast<int>(text::parse_int(f[2]));
            if (d < 0 || d >= p.n_subtasks || pos < 0 || pos >= p.actions_per_subtask)
                throw Error(Errc::parse_error, "params state out of range in '" + line + "'");
            for (int a = 0; a < p.vocab_size; ++a)
                p.at(d, pos, a) = text::parse_double(f[3 + static_cast<size_t>(a)]);
        } else {
            throw Error(Errc::parse_error, "bad params line '" + line + "'");
        }
    }
    if (p.logits.empty()) throw Error(Errc::parse_error, "params file has no dims line");
    return p;
}

void enforce_blacklist(const RubricNode& root, const std::string& blacklist_path) {
    if (blacklist_path.empty()) return;
    const Blacklist bl = read_blacklist_file(blacklist_path);
    std::vector<const RubricNode*> stack{&root};
    while (!stack.empty()) {
        const RubricNode* n = stack.back();
        stack.pop_back();
        if (bl.matches(n->id))
            throw Error(Errc::invalid_config, "rubric id '" + n->id + "' is blacklisted");
        for (const auto& c : n->children) stack.push_back(&c);
    }
}

std::string fixed(double v, int prec = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
    return buf;
}

int cmd_split(const std::string& input, const std::string& config_path, const std::string& out_dir,
              const std::string& dedup, int window_steps, int overlap_steps, int max_tokens) {
    SplitConfig cfg;
    if (!config_path.empty()) {
        const json j = parse_json_file(config_path);
        cfg = j.contains("split") ? split_config_from_json(j.at("split"))
                                  : split_config_from_json(j);
    }
    if (window_steps > 0) cfg.window_steps = window_steps;
    if (overlap_steps >= 0) cfg.overlap_steps = overlap_steps;
    if (max_tokens > 0) cfg.max_context_tokens = max_tokens;
    if (!dedup.empty()) cfg.dedup_loss_on_overlap = dedup == "on";
    cfg.validate();

    const Trajectory traj = read_trajectory_file(input);
    const auto report = validate_trajectory(traj);
    if (!report.ok()) throw Error(Errc::invalid_config, "trajectory: " + report.violations.front());

    const auto subs = split_trajectory(traj, cfg, fs::path(input).stem().string());
    const auto coverage = coverage_report(traj, subs);

    fs::create_directories(out_dir);
    spit((fs::path(out_dir) / "split_plan.txt").string(), format_split_plan(subs));

    std::ostringstream cov;
    cov << "windows " << subs.size() << "\n";
    cov << "uncovered_tokens " << coverage.uncovered_tokens.size() << "\n";
    cov << "duplicated_tokens " << coverage.duplicated_tokens.size() << "\n";
    cov << "step_multiplicity";
    for (int m : coverage.step_multiplicity) cov << " " << m;
    cov << "\n";
    spit((fs::path(out_dir) / "coverage.txt").string(), cov.str());

    std::cout << "windows=" << subs.size() << " uncovered=" << coverage.uncovered_tokens.size()
              << " duplicated=" << coverage.duplicated_tokens.size() << "\n";
    return 0;
}

int cmd_train(const std::string& config_path, std::int64_t seed_override,
              const std::string& out_override, const std::string& blacklist_path) {
    ExperimentConfig cfg = load_experiment_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
    if (!out_override.empty()) cfg.out_dir = out_override;

    const ChainTask task = read_task_file(cfg.task_file);
    enforce_blacklist(task.rubric, blacklist_path);
    const StageSchedule schedule =
        build_schedule(cfg.stage_timeouts, cfg.stage_iterations, cfg.group_size);
    const auto demos =
        make_demonstrations(task, cfg.demonstrations, rng::derive(cfg.seed, 0xde30));

    const TrainResult result =
        run_training(task, demos, schedule, cfg.split, cfg.hp, cfg.seed, cfg.train);

    fs::create_directories(cfg.out_dir);
    write_metrics_file(result.metrics, (fs::path(cfg.out_dir) / "metrics.mxv1").string());
    spit((fs::path(cfg.out_dir) / "params.pmv1").string(), encode_params(result.params));

    const auto final_eval = evaluate(result.params, task, task.time_budget, cfg.train.n_eval,
                                     rng::derive(cfg.seed, 0xf17a));
    std::cout << "final_eval_q=" << text::format_double(final_eval.q_mean)
              << " turns=" << text::format_double(final_eval.turns_mean)
              << " entropy=" << text::format_double(final_eval.entropy) << "\n";
    return 0;
}

int cmd_simulate(const std::string& spec_path, const std::string& strategy, double horizon,
                 std::int64_t seed, const std::string& out_dir) {
    const ClusterSpec spec = cluster_spec_from_json(parse_json_file(spec_path));
    SimStrategy strat;
    if (strategy == "synchronous") {
        strat = SimStrategy::synchronous;
    } else if (strategy == "partial") {
        strat = SimStrategy::partial_rollout_priority;
    } else {
        throw Error(Errc::invalid_config, "strategy must be 'synchronous' or 'partial'");
    }
    const SimResult res =
        simulate(spec, strat, horizon, seed >= 0 ? static_cast<std::uint64_t>(seed) : 0);

    fs::create_directories(out_dir);
    write_events_file(res.events, (fs::path(out_dir) / "events.evv1").string());

    std::ostringstream sum;
    sum << "utilization " << text::format_double(res.metrics.rollout_node_utilization) << "\n";
    sum << "judge_queue_max_depth " << res.metrics.judge_queue_max_depth << "\n";
    sum << "mean_eval_judge_latency " << text::format_double(res.metrics.mean_eval_judge_latency)
        << "\n";
    sum << "carried_over_rollouts " << res.metrics.carried_over_rollouts << "\n";
    sum << "resume_events " << res.metrics.resume_events << "\n";
    sum << "iterations_completed " << res.metrics.iterations_completed << "\n";
    spit((fs::path(out_dir) / "sim_summary.txt").string(), sum.str());

    std::cout << "utilization=" << text::format_double(res.metrics.rollout_node_utilization)
              << "\n";
    return 0;
}

int cmd_evaluate(const std::string& task_path, const std::string& params_path, double timeout,
                 int n_eval, std::int64_t seed, bool greedy, const std::string& blacklist_path) {
    const ChainTask task = read_task_file(task_path);
    enforce_blacklist(task.rubric, blacklist_path);
    const PolicyParams params = decode_params(slurp(params_path));
    const double t = timeout > 0 ? timeout : task.time_budget;
    const auto ev = evaluate(params, task, t, n_eval, static_cast<std::uint64_t>(seed),
                             greedy ? ActionMode::greedy : ActionMode::sample);
    std::cout << "q_mean=" << text::format_double(ev.q_mean)
              << " turns_mean=" << text::format_double(ev.turns_mean)
              << " entropy=" << text::format_double(ev.entropy) << "\n";
    return 0;
}

int cmd_report(const std::string& metrics_path, const std::string& events_path,
               const std::string& out_dir) {
    fs::create_directories(out_dir);
    if (!metrics_path.empty()) {
        const TrainRunMetrics metrics = read_metrics_file(metrics_path);
        std::ostringstream table;
        table << "iter  stage  q_mean   turns    entropy  loss\n";
        std::ostringstream q_xy, turns_xy, entropy_xy, loss_xy;
        for (const auto& r : metrics.records) {
            char row[160];
            std::snprintf(row, sizeof(row), "%-5d %-6d %-8.4f %-8.2f %-8.4f %.6f\n", r.iteration,
                          r.stage, r.q_mean, r.turns_mean, r.entropy, r.loss);
            table << row;
            q_xy << r.iteration << " " << text::format_double(r.q_mean) << "\n";
            turns_xy << r.iteration << " " << text::format_double(r.turns_mean) << "\n";
            entropy_xy << r.iteration << " " << text::format_double(r.entropy) << "\n";
            loss_xy << r.iteration << " " << text::format_double(r.loss) << "\n";
        }
        spit((fs::path(out_dir) / "metrics_table.txt").string(), table.str());
        spit((fs::path(out_dir) / "q_vs_iteration.xy").string(), q_xy.str());
        spit((fs::path(out_dir) / "turns_vs_iteration.xy").string(), turns_xy.str());
        spit((fs::path(out_dir) / "entropy_vs_iteration.xy").string(), entropy_xy.str());
        spit((fs::path(out_dir) / "loss_vs_iteration.xy").string(), loss_xy.str());
        std::cout << "metrics records=" << metrics.records.size() << "\n";
    }
    if (!events_path.empty()) {
        const auto events = read_events_file(events_path);
        // waiting-queue depth over time, one (t, depth) pair per change
        std::ostringstream depth_xy;
        int depth = 0;
        for (const auto& e : events) {
            if (e.kind == SimEventKind::judge_enqueue) ++depth;
            else if (e.kind == SimEventKind::judge_start) --depth;
            else continue;
            depth_xy << text::format_double(e.time) << " " << depth << "\n";
        }
        spit((fs::path(out_dir) / "queue_depth_vs_time.xy").string(), depth_xy.str());
        std::cout << "events=" << events.size() << "\n";
    }
    if (metrics_path.empty() && events_path.empty())
        throw Error(Errc::invalid_config, "report needs --metrics and/or --events");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Long-horizon training toolkit: trajectory splitting, staged RL on a subtask "
                 "chain, rubric judging, and a rollout/judge pipeline simulator"};
    app.require_subcommand(1);

    // split
    auto* split = app.add_subcommand("split", "Split a trajectory file into overlapping windows");
    std::string split_input, split_config, split_out = "out", split_dedup;
    int split_window = 0, split_overlap = -1, split_max_tokens = 0;
    split->add_option("--input", split_input, "trajectory file (hfv1)")->required();
    split->add_option("--config", split_config, "JSON config with a split section");
    split->add_option("--out", split_out, "output directory");
    split->add_option("--dedup-overlap", split_dedup, "on|off: mask duplicate overlap tokens")
        ->check(CLI::IsMember({"on", "off"}));
    split->add_option("--window-steps", split_window, "window length in steps");
    split->add_option("--overlap-steps", split_overlap, "overlap between windows in steps");
    split->add_option("--max-context-tokens", split_max_tokens, "token budget per window");

    // train
    auto* train = app.add_subcommand("train", "Run warm start + staged RL from a JSON config");
    std::string train_config, train_out, train_blacklist;
    std::int64_t train_seed = -1;
    train->add_option("--config", train_config, "experiment config (JSON)")->required();
    train->add_option("--seed", train_seed, "override the config seed");
    train->add_option("--out", train_out, "override the config output directory");
    train->add_option("--blacklist", train_blacklist, "refuse rubric ids listed in this file");

    // simulate
    auto* sim = app.add_subcommand("simulate", "Run the rollout/judge pipeline simulator");
    std::string sim_spec, sim_strategy = "synchronous", sim_out = "out";
    double sim_horizon = 0.0;
    std::int64_t sim_seed = 0;
    sim->add_option("--spec", sim_spec, "cluster spec (JSON)")->required();
    sim->add_option("--strategy", sim_strategy, "synchronous|partial")
        ->check(CLI::IsMember({"synchronous", "partial"}));
    sim->add_option("--horizon", sim_horizon, "simulated time span")->required();
    sim->add_option("--seed", sim_seed, "simulation seed");
    sim->add_option("--out", sim_out, "output directory");

    // evaluate
    auto* eval = app.add_subcommand("evaluate", "Evaluate a params file on a task");
    std::string eval_task, eval_params, eval_blacklist;
    double eval_timeout = 0.0;
    int eval_n = 16;
    std::int64_t eval_seed = 0;
    bool eval_greedy = false;
    eval->add_option("--task", eval_task, "task file (tkv1)")->required();
    eval->add_option("--params", eval_params, "params file (pmv1)")->required();
    eval->add_option("--timeout", eval_timeout, "rollout budget (default: task time_budget)");
    eval->add_option("--n-eval", eval_n, "number of evaluation rollouts");
    eval->add_option("--seed", eval_seed, "evaluation seed");
    eval->add_flag("--greedy", eval_greedy, "argmax actions instead of sampling");
    eval->add_option("--blacklist", eval_blacklist, "refuse rubric ids listed in this file");

    // report
    auto* report = app.add_subcommand("report", "Render metrics/events to tables and plot data");
    std::string report_metrics, report_events, report_out = "out";
    report->add_option("--metrics", report_metrics, "metrics file (mxv1)");
    report->add_option("--events", report_events, "event log (evv1)");
    report->add_option("--out", report_out, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e); // prints help, exit 0
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        if (split->parsed())
            return cmd_split(split_input, split_config, split_out, split_dedup, split_window,
                             split_overlap, split_max_tokens);
        if (train->parsed()) return cmd_train(train_config, train_seed, train_out, train_blacklist);
        if (sim->parsed()) return cmd_simulate(sim_spec, sim_strategy, sim_horizon, sim_seed, sim_out);
        if (eval->parsed())
            return cmd_evaluate(eval_task, eval_params, eval_timeout, eval_n, eval_seed,
                                eval_greedy, eval_blacklist);
        if (report->parsed()) return cmd_report(report_metrics, report_events, report_out);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
