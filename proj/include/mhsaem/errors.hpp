#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mhsaem {

/// Malformed input: bad configuration, non-finite data, invalid parameters.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Component or datapoint index outside its valid range.
class IndexError : public std::out_of_range {
public:
    using std::out_of_range::out_of_range;
};

/// Algorithm/family combination that is not implemented (e.g. TSAEM on flows).
class UnsupportedAlgorithm : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Sufficient statistics with zero mass; the caller keeps the previous parameters.
class EmptyComponent : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite parameters or gradients during training.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t iteration = 0)
        : std::runtime_error(what), iteration_(iteration) {}
    std::size_t iteration() const noexcept { return iteration_; }

private:
    std::size_t iteration_;
};

class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Process exit codes used by the command-line tool.
enum class ExitCode : int { ok = 0, validation = 1, numerical = 2, io = 3 };

} // namespace mhsaem
