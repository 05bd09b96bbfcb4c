#pragma once

#include <stdexcept>
#include <string>

namespace attenlab {

// Base class for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/axis disagreements between tensors or layer parameters.
class DimensionError : public Error {
public:
  using Error::Error;
};

// An argument violates a documented precondition (bad label, bad range, ...).
class ContractError : public Error {
public:
  using Error::Error;
};

// Malformed file contents (checkpoints, rasters).
class FormatError : public Error {
public:
  using Error::Error;
};

// NaN/Inf where finite values are required.
class NumericError : public Error {
public:
  using Error::Error;
};

// Inconsistent model or run configuration.
class ConfigError : public Error {
public:
  using Error::Error;
};

// Unusable input data (empty dataset, zero-area image).
class InputError : public Error {
public:
  using Error::Error;
};

// Filesystem failures.
class IoError : public Error {
public:
  using Error::Error;
};

}  // namespace attenlab
