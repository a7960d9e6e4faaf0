#pragma once

#include <stdexcept>
#include <string>

namespace kvprune {

// Base class for all library errors.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A value violates an operation's precondition (bad dimension, NaN, ...).
struct InvalidInput : Error {
  using Error::Error;
};

// A configuration object or config file is malformed.
struct InvalidConfig : Error {
  using Error::Error;
};

// A slot handle does not name a live cache slot.
struct InvalidHandle : Error {
  using Error::Error;
};

// An eviction tried to remove a protected sink slot.
struct SinkProtected : Error {
  using Error::Error;
};

// A trace stream is malformed or out of order.
struct InvalidTrace : Error {
  using Error::Error;
};

// A synthetic trace spec cannot be satisfied.
struct InvalidSpec : Error {
  using Error::Error;
};

// Filesystem-level failure.
struct IoError : Error {
  using Error::Error;
};

}  // namespace kvprune
