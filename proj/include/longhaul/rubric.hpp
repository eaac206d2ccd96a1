#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "longhaul/snapshot.hpp"
#include "longhaul/trajectory.hpp"

namespace longhaul {

// Weighted criteria tree. A node is either internal (nonempty children) or a
// leaf carrying the name of a deterministic pass/fail predicate over an
// environment snapshot.
struct RubricNode {
    std::string id;
    double weight = 1.0;
    std::vector<RubricNode> children;
    std::string leaf_check; // predicate name; empty for internal nodes

    bool is_leaf() const { return children.empty() && !leaf_check.empty(); }
    bool operator==(const RubricNode&) const = default;
};

struct JudgeResult {
    double score = 0.0;                // Q in [0, 1]
    std::map<std::string, bool> per_leaf;
};

using PredicateFn = std::function<bool(const EnvSnapshot&)>;

// Built-in predicate names:
//   subtask:<j>   j-th subtask complete (0-based)
//   all_subtasks  every subtask complete
//   min_turns:<k> at least k regular steps taken
//   always_pass / always_fail
// Returns an empty function for unknown names.
PredicateFn resolve_predicate(const std::string& name);

// Lists invariant violations (leaf-xor-internal, negative/non-finite weights,
// all-zero sibling weights, duplicate ids, unknown predicates). Never throws.
ValidationReport validate_rubric(const RubricNode& root);

// Leaf score is 1 if its predicate passes, else 0; internal score is the
// weighted mean of child scores with weights normalized per sibling group.
JudgeResult score_rubric(const RubricNode& root, const EnvSnapshot& snapshot);

// Convenience: rubric with one equal-weight "subtask:<j>" leaf per subtask.
RubricNode make_chain_rubric(int n_subtasks);

// Rubric file format "rbv1": header line, then one node per line,
//   node <id> <weight>
//   leaf <id> <weight> <predicate>
// with children indented two spaces per depth level.
std::string encode_rubric(const RubricNode& root);
RubricNode decode_rubric(const std::string& content);
RubricNode read_rubric_file(const std::string& path);
void write_rubric_file(const RubricNode& root, const std::string& path);

// Identifier blacklist, one per line; '#' starts a comment. The CLI refuses
// to load a resource whose id appears here.
struct Blacklist {
    std::vector<std::string> entries;
    bool matches(const std::string& id) const;
};

Blacklist read_blacklist_file(const std::string& path);

} // namespace longhaul
