#pragma once

#include <stdexcept>
#include <string>

namespace dualflow {

/// Base class for all library errors.
class error : public std::runtime_error {
 public:
  explicit error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid numeric input: non-finite argument, y <= 0, bad weights.
class domain_error : public error {
 public:
  using error::error;
};

/// Operation not supported by the given variant (derivative order, model kind).
class capability_error : public error {
 public:
  using error::error;
};

/// A mathematical precondition failed numerically (Inada bracket, concavity).
class regularity_error : public error {
 public:
  using error::error;
};

/// Solver breakdown: ill-conditioning, divergence, bracketing failure.
class numerics_error : public error {
 public:
  using error::error;
};

/// A value left a tabulated grid where extrapolation is forbidden.
class grid_error : public error {
 public:
  using error::error;
};

/// File and serialization problems.
class io_error : public error {
 public:
  using error::error;
};

}  // namespace dualflow
