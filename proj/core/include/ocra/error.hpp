#pragma once

#include <stdexcept>
#include <string>

namespace ocra {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not agree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// A caller broke an API contract (e.g. backward from a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

// Invalid or inconsistent run configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed file contents (IDX, OCRD, checkpoints, PGM).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A loss or activation became NaN/Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ocra
