#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace mavias {

/// A caller broke a documented precondition (shape mismatch, out-of-range
/// argument, call order).
class ContractViolation : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Invalid user-supplied configuration (bad hyperparameters, unknown keys).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Numerical failure such as a non-finite logit.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Network or service failure. Callers may retry.
class TransportError : public std::runtime_error {
public:
    TransportError(std::string subject, const std::string& what)
        : std::runtime_error(what + " [" + subject + "]"), subject_(std::move(subject)) {}

    /// Sample id, batch label or prompt the failed request was about.
    const std::string& subject() const noexcept { return subject_; }

private:
    std::string subject_;
};

/// A service answered but the payload could not be interpreted.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::string raw, std::ptrdiff_t batch_index = -1)
        : std::runtime_error(what), raw_(std::move(raw)), batch_index_(batch_index) {}

    const std::string& raw() const noexcept { return raw_; }
    /// Batch the payload belonged to, or -1 when not batched.
    std::ptrdiff_t batch_index() const noexcept { return batch_index_; }

private:
    std::string raw_;
    std::ptrdiff_t batch_index_;
};

} // namespace mavias
