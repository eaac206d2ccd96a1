#pragma once

// Shared fixtures for the test binaries: randomized trajectories and
// scratch directories for file round-trips.

#include <cstdint>
#include <filesystem>
#include <string>
#include <unistd.h>

#include "longhaul/rng.hpp"
#include "longhaul/trajectory.hpp"

namespace testsup {

using namespace longhaul;

// Structurally valid random trajectory: prefix block first, gnarly
// full-precision time costs to stress serialization.
inline Trajectory random_trajectory(std::uint64_t seed, int max_regular = 30) {
    Trajectory t;
    const std::uint64_t key = rng::derive(seed, 0x7e57);
    std::uint64_t c = 0;
    const int prefix = rng::uniform_int(key, c++, 4);
    const int regular = rng::uniform_int(key, c++, max_regular + 1);
    for (int i = 0; i < prefix; ++i)
        t.steps.push_back(Step{StepKind::prefix, rng::uniform_int(key, c++, 10),
                               rng::uniform_int(key, c++, 10), 0.0});
    for (int i = 0; i < regular; ++i) {
        double cost = rng::uniform(key, c++) * 3.0;
        if (rng::uniform_int(key, c++, 4) == 0) cost = 0.5 * rng::uniform_int(key, c++, 8);
        t.steps.push_back(Step{StepKind::regular, rng::uniform_int(key, c++, 10),
                               rng::uniform_int(key, c++, 10), cost});
    }
    t.env_seed = static_cast<std::int64_t>(rng::mix64(key ^ 0x5eed));
    t.terminal_snapshot_id = "s" + std::to_string(rng::uniform_int(key, c++, 1000000));
    return t;
}

// Empty scratch directory under the system temp dir, unique per tag+pid.
inline std::filesystem::path fresh_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() /
             ("longhaul_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testsup
