#pragma once

#include <stdexcept>
#include <string>

namespace dode {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input row or file.
class ParseError : public Error {
 public:
  using Error::Error;
};

// Dangling node reference, unreachable OD pair, bad path contiguity.
class TopologyError : public Error {
 public:
  using Error::Error;
};

// A value-level invariant does not hold (nonpositive length, negative demand, ...).
class InvariantError : public Error {
 public:
  using Error::Error;
};

// Operand shapes disagree (stale DAR, mismatched operator sizes, ...).
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Iterative solver aborted; the partial trace is still returned by the caller.
class SolverError : public Error {
 public:
  using Error::Error;
};

}  // namespace dode
