#pragma once
#include <stdexcept>
#include <string>

namespace varlocal {

// Base class for all toolkit errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Derivative evaluation requested outside the guaranteed C^2 ball in matrix space.
struct OutOfSmoothnessRegion : Error {
  explicit OutOfSmoothnessRegion(const std::string& msg) : Error(msg) {}
};

// A variation with vanishing gradient norm cannot be rescaled or pushed forward.
struct ZeroVariation : Error {
  explicit ZeroVariation(const std::string& msg) : Error(msg) {}
};

// Variation fails the admissibility constraints (nonzero trace on a Dirichlet face).
struct AdmissibilityViolation : Error {
  explicit AdmissibilityViolation(const std::string& msg) : Error(msg) {}
};

// Needle support ball is not contained in the domain.
struct SupportEscapesDomain : Error {
  explicit SupportEscapesDomain(const std::string& msg) : Error(msg) {}
};

// Requested local geometry is not resolvable on the grid.
struct ResolutionTooCoarse : Error {
  explicit ResolutionTooCoarse(const std::string& msg) : Error(msg) {}
};

// Base point incompatible with the requested probe geometry.
struct InvalidBasePoint : Error {
  explicit InvalidBasePoint(const std::string& msg) : Error(msg) {}
};

// Supplied (psi, z, v) do not satisfy z + v = psi within tolerance.
struct SplitMismatch : Error {
  explicit SplitMismatch(const std::string& msg) : Error(msg) {}
};

// Malformed scenario input (syntax, unknown keys, wrong types).
struct ParseError : Error {
  explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Well-formed scenario input with inadmissible content.
struct ValidationError : Error {
  explicit ValidationError(const std::string& msg) : Error(msg) {}
};

// File system failure on field or report I/O.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace varlocal
