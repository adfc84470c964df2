#pragma once

#include <stdexcept>
#include <string>

namespace mosaiks {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A caller-supplied argument or configuration value violates a precondition.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// Input data is unreadable, malformed, or inconsistent (files, joins, schemas).
class DataError : public Error {
 public:
  using Error::Error;
};

/// A numerical routine could not produce a meaningful result.
class NumericalError : public Error {
 public:
  using Error::Error;
};

namespace detail {

inline void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

}  // namespace detail
}  // namespace mosaiks
