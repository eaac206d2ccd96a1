#pragma once

#include <stdexcept>
#include <string>

namespace longhaul {

// Domain error codes. The CLI maps any of these to exit code 1.
enum class Errc {
    invalid_config,
    prefix_too_large,
    empty_window,
    empty_rubric,
    unknown_predicate,
    index_out_of_range,
    empty_loss_mask,
    empty_batch,
    non_increasing_timeouts,
    length_mismatch,
    non_positive_entries,
    empty_evaluation,
    invalid_spec,
    parse_error,
    io_error,
};

inline const char* errc_name(Errc c) {
    switch (c) {
        case Errc::invalid_config: return "InvalidConfig";
        case Errc::prefix_too_large: return "PrefixTooLarge";
        case Errc::empty_window: return "EmptyWindow";
        case Errc::empty_rubric: return "EmptyRubric";
        case Errc::unknown_predicate: return "UnknownPredicate";
        case Errc::index_out_of_range: return "IndexOutOfRange";
        case Errc::empty_loss_mask: return "EmptyLossMask";
        case Errc::empty_batch: return "EmptyBatch";
        case Errc::non_increasing_timeouts: return "NonIncreasingTimeouts";
        case Errc::length_mismatch: return "LengthMismatch";
        case Errc::non_positive_entries: return "NonPositiveEntries";
        case Errc::empty_evaluation: return "EmptyEvaluation";
        case Errc::invalid_spec: return "InvalidSpec";
        case Errc::parse_error: return "ParseError";
        case Errc::io_error: return "IoError";
    }
    return "Error";
}

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

} // namespace longhaul
