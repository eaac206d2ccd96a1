#include "longhaul/rubric.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "longhaul/errors.hpp"
#include "longhaul/text.hpp"

namespace longhaul {

std::string encode_snapshot_id(const EnvSnapshot& snap) {
    std::ostringstream out;
    out << "chain:done=" << snap.subtasks_completed << ",of=" << snap.total_subtasks
        << ",pos=" << snap.position << ",steps=" << snap.steps_taken
        << ",t=" << text::format_double(snap.time_used);
    return out.str();
}

EnvSnapshot decode_snapshot_id(const std::string& id) {
    if (id.rfind("chain:", 0) != 0)
        throw Error(Errc::parse_error, "bad snapshot id '" + id + "'");
    EnvSnapshot snap;
    std::string body = id.substr(6);
    std::istringstream in(body);
    std::string field;
    int seen = 0;
    while (std::getline(in, field, ',')) {
        auto eq = field.find('=');
        if (eq == std::string::npos)
            throw Error(Errc::parse_error, "bad snapshot field '" + field + "'");
        const std::string key = field.substr(0, eq);
        const std::string val = field.substr(eq + 1);
        if (key == "done") snap.subtasks_completed = static_cast<int>(text::parse_int(val));
        else if (key == "of") snap.total_subtasks = static_cast<int>(text::parse_int(val));
        else if (key == "pos") snap.position = static_cast<int>(text::parse_int(val));
        else if (key == "steps") snap.steps_taken = static_cast<int>(text::parse_int(val));
        else if (key == "t") snap.time_used = text::parse_double(val);
        else throw Error(Errc::parse_error, "unknown snapshot field '" + key + "'");
        ++seen;
    }
    if (seen != 5) throw Error(Errc::parse_error, "snapshot id needs 5 fields");
    return snap;
}

PredicateFn resolve_predicate(const std::string& name) {
    if (name == "always_pass") return [](const EnvSnapshot&) { return true; };
    if (name == "always_fail") return [](const EnvSnapshot&) { return false; };
    if (name == "all_subtasks")
        return [](const EnvSnapshot& s) {
            return s.total_subtasks > 0 && s.subtasks_completed >= s.total_subtasks;
        };
    try {
        if (name.rfind("subtask:", 0) == 0) {
            const int j = static_cast<int>(text::parse_int(name.substr(8)));
            return [j](const EnvSnapshot& s) { return s.subtasks_completed > j; };
        }
        if (name.rfind("min_turns:", 0) == 0) {
            const int k = static_cast<int>(text::parse_int(name.substr(10)));
            return [k](const EnvSnapshot& s) { return s.steps_taken >= k; };
        }
    } catch (const Error&) {
        // malformed numeric suffix -> treated as an unknown predicate
    }
    return {};
}

namespace {

void validate_node(const RubricNode& node, ValidationReport& report,
                   std::set<std::string>& seen_ids) {
    if (!seen_ids.insert(node.id).second)
        report.violations.push_back("duplicate id '" + node.id + "'");
    const bool has_children = !node.children.empty();
    const bool has_check = !node.leaf_check.empty();
    if (has_children == has_check)
        report.violations.push_back("node '" + node.id +
                                    "' must have exactly one of children or leaf_check");
    if (!(node.weight >= 0) || !std::isfinite(node.weight))
        report.violations.push_back("node '" + node.id + "' has invalid weight");
    if (has_check && !resolve_predicate(node.leaf_check))
        report.violations.push_back("node '" + node.id + "' names unknown predicate '" +
                                    node.leaf_check + "'");
    if (has_children) {
        bool any_positive = false;
        for (const RubricNode& child : node.children)
            if (child.weight > 0) any_positive = true;
        if (!any_positive)
            report.violations.push_back("children of '" + node.id + "' have no positive weight");
        for (const RubricNode& child : node.children) validate_node(child, report, seen_ids);
    }
}

double score_node(const RubricNode& node, const EnvSnapshot& snapshot, JudgeResult& result) {
    if (node.is_leaf()) {
        PredicateFn pred = resolve_predicate(node.leaf_check);
        if (!pred)
            throw Error(Errc::unknown_predicate, "'" + node.leaf_check + "' at '" + node.id + "'");
        const bool pass = pred(snapshot);
        result.per_leaf[node.id] = pass;
        return pass ? 1.0 : 0.0;
    }
    double weight_sum = 0.0;
    double acc = 0.0;
    for (const RubricNode& child : node.children) {
        const double s = score_node(child, snapshot, result);
        acc += child.weight * s;
        weight_sum += child.weight;
    }
    return weight_sum > 0 ? acc / weight_sum : 0.0;
}

int count_leaves(const RubricNode& node) {
    if (node.children.empty()) return node.leaf_check.empty() ? 0 : 1;
    int n = 0;
    for (const RubricNode& child : node.children) n += count_leaves(child);
    return n;
}

} // namespace

ValidationReport validate_rubric(const RubricNode& root) {
    ValidationReport report;
    std::set<std::string> seen_ids;
    validate_node(root, report, seen_ids);
    return report;
}

JudgeResult score_rubric(const RubricNode& root, const EnvSnapshot& snapshot) {
    if (count_leaves(root) == 0) throw Error(Errc::empty_rubric, "rubric has no leaves");
    JudgeResult result;
    result.score = score_node(root, snapshot, result);
    return result;
}

RubricNode make_chain_rubric(int n_subtasks) {
    RubricNode root;
    root.id = "root";
    root.weight = 1.0;
    for (int j = 0; j < n_subtasks; ++j) {
        RubricNode leaf;
        leaf.id = "subtask" + std::to_string(j);
        leaf.weight = 1.0;
        leaf.leaf_check = "subtask:" + std::to_string(j);
        root.children.push_back(std::move(leaf));
    }
    return root;
}

namespace {

void encode_node(const RubricNode& node, int depth, std::ostringstream& out) {
    for (int i = 0; i < depth; ++i) out << "  ";
    if (node.is_leaf() || node.children.empty()) {
        out << "leaf " << node.id << ' ' << text::format_double(node.weight) << ' '
            << node.leaf_check << "\n";
    } else {
        out << "node " << node.id << ' ' << text::format_double(node.weight) << "\n";
        for (const RubricNode& child : node.children) encode_node(child, depth + 1, out);
    }
}

} // namespace

std::string encode_rubric(const RubricNode& root) {
    std::ostringstream out;
    out << "rbv1\n";
    encode_node(root, 0, out);
    return out.str();
}

namespace {

struct RubricLine {
    int depth = 0;
    RubricNode node;
};

RubricNode parse_subtree(const std::vector<RubricLine>& lines, size_t& pos, int depth) {
    if (lines[pos].depth != depth)
        throw Error(Errc::parse_error, "rubric indentation jumps a level");
    RubricNode node = lines[pos].node;
    ++pos;
    while (pos < lines.size() && lines[pos].depth > depth) {
        node.children.push_back(parse_subtree(lines, pos, depth + 1));
    }
    return node;
}

} // namespace

RubricNode decode_rubric(const std::string& content) {
    std::istringstream in(content);
    std::string line;
    if (!std::getline(in, line) || text::split_ws(line) != std::vector<std::string>{"rbv1"})
        throw Error(Errc::parse_error, "expected 'rbv1' header");

    std::vector<RubricLine> lines;
    while (std::getline(in, line)) {
        size_t indent = 0;
        while (indent < line.size() && line[indent] == ' ') ++indent;
        if (indent == line.size()) continue;
        if (indent % 2 != 0) throw Error(Errc::parse_error, "rubric indentation must be 2 spaces");
        RubricLine rl;
        rl.depth = static_cast<int>(indent / 2);
        auto f = text::split_ws(line);
        if (f[0] == "node" && f.size() == 3) {
            rl.node.id = f[1];
            rl.node.weight = text::parse_double(f[2]);
        } else if (f[0] == "leaf" && f.size() == 4) {
            rl.node.id = f[1];
            rl.node.weight = text::parse_double(f[2]);
            rl.node.leaf_check = f[3];
        } else {
            throw Error(Errc::parse_error, "bad rubric line '" + line + "'");
        }
        lines.push_back(std::move(rl));
    }
    if (lines.empty()) throw Error(Errc::parse_error, "rubric file has no nodes");

    size_t pos = 0;
    RubricNode root = parse_subtree(lines, pos, 0);
    if (pos != lines.size()) throw Error(Errc::parse_error, "rubric has multiple roots");
    return root;
}

RubricNode read_rubric_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return decode_rubric(buf.str());
}

void write_rubric_file(const RubricNode& root, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(Errc::io_error, "cannot open '" + path + "' for writing");
    out << encode_rubric(root);
}

bool Blacklist::matches(const std::string& id) const {
    return std::find(entries.begin(), entries.end(), id) != entries.end();
}

Blacklist read_blacklist_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot open '" + path + "'");
    Blacklist bl;
    std::string line;
    while (std::getline(in, line)) {
        auto f = text::split_ws(line);
        if (f.empty() || f[0][0] == '#') continue;
        bl.entries.push_back(f[0]);
    }
    return bl;
}

} // namespace longhaul
