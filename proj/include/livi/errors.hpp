#pragma once

#include <stdexcept>
#include <string>

namespace livi {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Incompatible shapes or lengths.
class DimensionError : public Error {
public:
  using Error::Error;
};

/// Input outside the mathematical domain of an operation (e.g. log of a
/// non-positive value, non-SPD matrix handed to a Cholesky).
class DomainError : public Error {
public:
  using Error::Error;
};

/// Caller violated a documented precondition.
class ContractError : public Error {
public:
  using Error::Error;
};

/// Invalid model, run or optimizer configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

/// Problem too large for a dense fallback.
class CapacityError : public Error {
public:
  using Error::Error;
};

/// Stochastic estimator or iterative solver could not produce a value.
class EstimatorError : public Error {
public:
  using Error::Error;
};

/// Malformed input file. The message carries the row/column location.
class IngestionError : public Error {
public:
  using Error::Error;
};

}  // namespace livi
