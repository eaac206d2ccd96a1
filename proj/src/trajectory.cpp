#include "longhaul/trajectory.hpp"

#include <fstream>
#include <ostream>
#include <sstream>

#include "longhaul/errors.hpp"
#include "longhaul/text.hpp"

namespace longhaul {

ValidationReport validate_trajectory(const Trajectory& traj) {
    ValidationReport report;
    bool seen_regular = false;
    for (size_t i = 0; i < traj.steps.size(); ++i) {
        const Step& s = traj.steps[i];
        const std::string at = "step " + std::to_string(i) + ": ";
        if (s.obs_tokens < 0) report.violations.push_back(at + "negative obs_tokens");
        if (s.act_tokens < 0) report.violations.push_back(at + "negative act_tokens");
        if (!(s.time_cost >= 0)) report.violations.push_back(at + "negative time_cost");
        if (s.kind == StepKind::regular) {
            seen_regular = true;
        } else if (seen_regular) {
            report.violations.push_back(at + "prefix after regular");
        }
    }
    return report;
}

int token_length(const Step& step) { return step.obs_tokens + step.act_tokens; }

int token_length(const Trajectory& traj) {
    int total = 0;
    for (const Step& s : traj.steps) total += token_length(s);
    return total;
}

int assistant_turns(const Trajectory& traj) {
    int n = 0;
    for (const Step& s : traj.steps)
        if (s.kind == StepKind::regular) ++n;
    return n;
}

int prefix_step_count(const Trajectory& traj) {
    int n = 0;
    for (const Step& s : traj.steps) {
        if (s.kind != StepKind::prefix) break;
        ++n;
    }
    return n;
}

Trajectory append(Trajectory traj, const Step& step) {
    traj.steps.push_back(step);
    return traj;
}

namespace {

const char* kind_name(StepKind k) { return k == StepKind::prefix ? "prefix" : "regular"; }

StepKind parse_kind(const std::string& s) {
    if (s == "prefix") return StepKind::prefix;
    if (s == "regular") return StepKind::regular;
    throw Error(Errc::parse_error, "bad step kind '" + s + "'");
}

} // namespace

void encode_trajectory(const Trajectory& traj, std::ostream& out) {
    if (traj.terminal_snapshot_id.find_first_of(" \t\n") != std::string::npos)
        throw Error(Errc::io_error, "snapshot id contains whitespace");
    out << "hfv1 seed=" << traj.env_seed << " snapshot=" << traj.terminal_snapshot_id << "\n";
    for (const Step& s : traj.steps) {
        out << kind_name(s.kind) << ' ' << s.obs_tokens << ' ' << s.act_tokens << ' '
            << text::format_double(s.time_cost) << "\n";
    }
}

Trajectory decode_trajectory(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw Error(Errc::parse_error, "empty trajectory file");
    auto header = text::split_ws(line);
    if (header.size() != 3 || header[0] != "hfv1")
        throw Error(Errc::parse_error, "expected 'hfv1 seed=... snapshot=...' header");
    if (header[1].rfind("seed=", 0) != 0 || header[2].rfind("snapshot=", 0) != 0)
        throw Error(Errc::parse_error, "malformed hfv1 header fields");

    Trajectory traj;
    traj.env_seed = text::parse_int(header[1].substr(5));
    traj.terminal_snapshot_id = header[2].substr(9);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto f = text::split_ws(line);
        if (f.size() != 4)
            throw Error(Errc::parse_error, "expected 4 step fields, got " + std::to_string(f.size()));
        Step s;
        s.kind = parse_kind(f[0]);
        s.obs_tokens = static_cast<int>(text::parse_int(f[1]));
        s.act_tokens = static_cast<int>(text::parse_int(f[2]));
        s.time_cost = text::parse_double(f[3]);
        traj.steps.push_back(s);
    }
    return traj;
}

void write_trajectory_file(const Trajectory& traj, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    encode_trajectory(traj, out);
}

Trajectory read_trajectory_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    return decode_trajectory(in);
}

} // namespace longhaul
