#pragma once

#include <stdexcept>
#include <string>

namespace pelab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A chart point lies outside the declared coordinate ranges.
class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// A chart point sits on a singular boundary value (r = 0, theta0 = pi/2, rho = 0).
class DegeneratePoint : public Error {
 public:
  using Error::Error;
};

/// A finite-difference stencil left the chart.
class StencilError : public Error {
 public:
  using Error::Error;
};

/// A matrix that had to be inverted was (numerically) singular.
class SingularMetric : public Error {
 public:
  using Error::Error;
};

/// Invalid arguments or configuration.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A rescaling case violates its near-axis / off-axis invariant, or q is outside B+.
class CaseInvariantViolated : public Error {
 public:
  using Error::Error;
};

/// No admissible weight exists for the requested end (e.g. a rank-2 cusp in n = 4).
class AdmissibilityObstruction : public Error {
 public:
  AdmissibilityObstruction(std::string end, std::string reason)
      : Error(end + ": " + reason), end_(std::move(end)), reason_(std::move(reason)) {}
  const std::string& end() const noexcept { return end_; }
  const std::string& reason() const noexcept { return reason_; }

 private:
  std::string end_;
  std::string reason_;
};

/// The window for mu0 is empty: (n-1)^2 + 4K <= 0.
class DimensionTooSmall : public Error {
 public:
  using Error::Error;
};

class NoRealIndicialRoots : public Error {
 public:
  using Error::Error;
};

/// Iterative solve failed. `reason` distinguishes an exhausted iteration cap from an
/// operator found to be indefinite during conjugate gradients.
class NonConvergence : public Error {
 public:
  enum class Reason { IterationCap, Indefinite };
  NonConvergence(Reason reason, double residual, int iterations)
      : Error(std::string(reason == Reason::IterationCap ? "iteration cap exceeded"
                                                          : "operator is indefinite") +
              " (relative residual " + std::to_string(residual) + " after " +
              std::to_string(iterations) + " iterations)"),
        reason_(reason),
        residual_(residual),
        iterations_(iterations) {}
  Reason reason() const noexcept { return reason_; }
  double residual() const noexcept { return residual_; }
  int iterations() const noexcept { return iterations_; }

 private:
  Reason reason_;
  double residual_;
  int iterations_;
};

/// A "compactly supported" sample touches the grid margin.
class SupportViolation : public Error {
 public:
  using Error::Error;
};

/// Leading-coefficient extraction in rho did not stabilise.
class IndicialExtractionFailure : public Error {
 public:
  using Error::Error;
};

/// The indicial matrix is singular at the requested exponent.
class CharacteristicExponentHit : public Error {
 public:
  CharacteristicExponentHit(double exponent, int stage)
      : Error("indicial matrix singular at exponent " + std::to_string(exponent) +
              " (stage " + std::to_string(stage) + ")"),
        exponent_(exponent),
        stage_(stage) {}
  double exponent() const noexcept { return exponent_; }
  int stage() const noexcept { return stage_; }

 private:
  double exponent_;
  int stage_;
};

}  // namespace pelab
