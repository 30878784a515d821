#pragma once

#include <stdexcept>
#include <string>

namespace spinchill {

/// Invalid or inconsistent run configuration (CLI exit code 2).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A numerical procedure failed: misaligned grids, non-finite state, singular solve (exit code 3).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A steady state was requested for dynamics that are not asymptotically stable (exit code 4).
class InstabilityError : public std::runtime_error {
public:
    InstabilityError(const std::string& what, double max_real_part)
        : std::runtime_error(what), max_real_part_(max_real_part)
    {
    }
    double max_real_part() const { return max_real_part_; }

private:
    double max_real_part_;
};

/// File-system failures, carrying the offending path (exit code 5).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace spinchill
