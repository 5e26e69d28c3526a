#pragma once

#include <stdexcept>
#include <string>

namespace evc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shapes or ranks do not line up; message names the offending axis.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf reached a place that requires finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Bad module configuration (head counts, unknown variant, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Malformed or unusable caller input (audio too short, empty batch, ...).
class InputError : public Error {
 public:
  using Error::Error;
};

// An operation precondition was violated by the caller.
class ContractError : public Error {
 public:
  using Error::Error;
};

// File input/output failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Checkpoint does not match the requested model configuration.
class CompatError : public Error {
 public:
  using Error::Error;
};

}  // namespace evc
