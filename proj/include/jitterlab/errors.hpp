#pragma once

#include <stdexcept>
#include <string>

namespace jitterlab {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Shape or size disagreement between operands.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Non-finite value produced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Filesystem or stream failure.
class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file content (checkpoint, manifest, image).
class ParseError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// mav found no pair satisfying both the SSIM and label-angle gates.
class NoQualifyingPairs : public Error {
 public:
  NoQualifyingPairs() : Error("no image pair satisfies the SSIM and label-angle constraints") {}
};

}  // namespace jitterlab
