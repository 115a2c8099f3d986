#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfgn {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad arguments or violated preconditions.
struct ArgumentError : Error {
  using Error::Error;
};

// Variable/factor pair that is not adjacent in the graph.
struct AdjacencyError : ArgumentError {
  using ArgumentError::ArgumentError;
};

// Work size exceeds a configured cap (e.g. joint-configuration count).
struct CapacityError : Error {
  using Error::Error;
};

// A message product collapsed to all zeros; callers fall back to uniform.
struct DegenerateMessageError : Error {
  using Error::Error;
};

// Non-finite value appeared during inference or training.
struct NumericalError : Error {
  using Error::Error;
};

// Invalid configuration (missing cluster centers, bad ranges, ...).
struct ConfigError : Error {
  using Error::Error;
};

// SMILES (or other text input) syntax error; carries the byte offset.
struct ParseError : Error {
  std::size_t position;
  ParseError(const std::string& msg, std::size_t pos)
      : Error(msg + " (at position " + std::to_string(pos) + ")"), position(pos) {}
};

// Molecule whose explicit bonds exceed an atom's valence, or other
// structural constraint violations.
struct ValenceError : Error {
  using Error::Error;
};

}  // namespace mfgn
