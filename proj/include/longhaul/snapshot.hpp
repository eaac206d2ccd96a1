#pragma once

#include <string>

namespace longhaul {

// Terminal state of a chain-task episode; the judge's predicates read this.
struct EnvSnapshot {
    int subtasks_completed = 0;
    int total_subtasks = 0;
    int position = 0;     // progress inside the current subtask
    int steps_taken = 0;  // regular steps emitted
    double time_used = 0; // wall-clock units consumed

    bool operator==(const EnvSnapshot&) const = default;
};

// Compact whitespace-free id so a snapshot can ride in a trajectory header.
std::string encode_snapshot_id(const EnvSnapshot& snap);
EnvSnapshot decode_snapshot_id(const std::string& id);

} // namespace longhaul
