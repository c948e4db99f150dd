#pragma once

#include <stdexcept>
#include <string>

namespace knockout {

/// Raised for contract violations: bad shapes, invalid parameters, broken
/// invariants. Messages name the offending feature, layer or field.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Conditioning event with zero probability in an exact enumeration.
class UnreachableEvidence : public Error {
 public:
  UnreachableEvidence() : Error("unreachable evidence") {}
  explicit UnreachableEvidence(const std::string& what) : Error("unreachable evidence: " + what) {}
};

/// Non-finite value produced inside a computation (activation, loss,
/// gradient). Trainers report it as divergence.
class NonFinite : public Error {
 public:
  using Error::Error;
};

}  // namespace knockout
