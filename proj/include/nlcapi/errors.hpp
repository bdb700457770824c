#pragma once

#include <stdexcept>
#include <string>

namespace nlcapi {

/// Caller supplied malformed input (dimension mismatch, inverted bounds, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// An LP or derived computation could not be resolved within tolerance.
struct NumericalFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct NotInDomain : InputError {
  using InputError::InputError;
};

/// The reference equilibrium itself violates a constraint.
struct InfeasibleReference : InputError {
  using InputError::InputError;
};

/// Weight, tree, or constraint document does not match its schema.
struct SchemaError : InputError {
  using InputError::InputError;
};

/// A referenced file is missing or unreadable.
struct FileError : InputError {
  using InputError::InputError;
};

}  // namespace nlcapi
