#pragma once

#include <stdexcept>
#include <string>

namespace ecap {

// Argument outside the mathematical domain of an operation (e.g. division by zero).
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

// Too few observations (or distinct values) to carry out an estimate.
class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent or incomplete configuration, e.g. MLE requested without outcomes.
class ConfigurationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Factorization or quadrature failure.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace ecap
