#pragma once

#include <stdexcept>
#include <string>

namespace lyapan {

/// Input outside an operation's domain (zero vector, coincident points, bad weights, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// A decomposition or interpolation that could not be carried out reliably.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Atom or path expansion would exceed the configured capacity.
class CapacityError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// An iteration showed no empirical contraction, or ran out of room before its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace lyapan
