#pragma once

#include <stdexcept>
#include <string>

namespace dsdrive {

// Base for all library errors. Subtypes distinguish recoverable categories
// so callers can react without string matching.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shape/dimension mismatch; message names the offending shapes.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range token id, class index, or row index.
struct IndexError : Error {
  using Error::Error;
};

// An op produced NaN/Inf. Ops never silently propagate non-finite values.
struct NonFiniteError : Error {
  using Error::Error;
};

// Structured-text parsing failure; message names the defect.
struct ParseError : Error {
  using Error::Error;
};

// Invariant violation on a domain record; message lists the fields.
struct ValidationError : Error {
  using Error::Error;
};

// File / network / format-version failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace dsdrive
