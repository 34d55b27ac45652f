#pragma once

#include <stdexcept>
#include <string>

namespace polyapx {

// Error taxonomy mirrors the CLI exit codes:
//   invalid_input_error      -> 2
//   numerical_error          -> 3
//   resource_error           -> 4
struct invalid_input_error : std::runtime_error {
    explicit invalid_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct degree_too_high_error : invalid_input_error {
    explicit degree_too_high_error(const std::string& msg) : invalid_input_error(msg) {}
};

// var(X) == 0 where a regression on X was requested; callers should switch to
// the degenerate (constant-X) path instead.
struct degenerate_variance_error : invalid_input_error {
    explicit degenerate_variance_error(const std::string& msg) : invalid_input_error(msg) {}
};

struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ill_conditioned_error : numerical_error {
    double condition_estimate;
    ill_conditioned_error(const std::string& msg, double cond)
        : numerical_error(msg), condition_estimate(cond) {}
};

struct training_diverged_error : numerical_error {
    long long step;
    training_diverged_error(const std::string& msg, long long at_step)
        : numerical_error(msg), step(at_step) {}
};

struct step_size_error : numerical_error {
    explicit step_size_error(const std::string& msg) : numerical_error(msg) {}
};

struct fvu_undefined_error : numerical_error {
    explicit fvu_undefined_error(const std::string& msg) : numerical_error(msg) {}
};

struct resource_error : std::runtime_error {
    explicit resource_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct format_error : invalid_input_error {
    explicit format_error(const std::string& msg) : invalid_input_error(msg) {}
};

}  // namespace polyapx
