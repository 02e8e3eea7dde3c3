#pragma once

#include <stdexcept>
#include <string>

namespace psilvm {

// Base class for all library errors so callers can catch the whole family.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct NotPositiveDefinite : Error {
    explicit NotPositiveDefinite(const std::string& msg = "matrix is not positive definite")
        : Error(msg) {}
};

struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg = "dimension mismatch") : Error(msg) {}
};

struct OrderTooLarge : Error {
    explicit OrderTooLarge(const std::string& msg = "quadrature order exceeds evaluation cap")
        : Error(msg) {}
};

struct WrongKernelKind : Error {
    explicit WrongKernelKind(const std::string& msg = "operation requires a different kernel kind")
        : Error(msg) {}
};

struct InvalidInput : Error {
    explicit InvalidInput(const std::string& msg) : Error(msg) {}
};

struct InvalidConfig : Error {
    explicit InvalidConfig(const std::string& msg) : Error(msg) {}
};

struct OptimizerDiverged : Error {
    explicit OptimizerDiverged(const std::string& msg = "optimizer produced a non-finite objective")
        : Error(msg) {}
};

struct ParseError : Error {
    long line = 0;
    long column = 0;
    ParseError(const std::string& msg, long line_, long column_)
        : Error(msg + " (line " + std::to_string(line_) + ", column " + std::to_string(column_) + ")"),
          line(line_), column(column_) {}
};

struct RaggedRows : Error {
    explicit RaggedRows(const std::string& msg = "CSV rows have inconsistent field counts")
        : Error(msg) {}
};

struct NonMonotoneTime : Error {
    explicit NonMonotoneTime(const std::string& msg = "series timestamps are not strictly increasing")
        : Error(msg) {}
};

struct SeriesTooShort : Error {
    explicit SeriesTooShort(const std::string& msg = "series too short for requested lag")
        : Error(msg) {}
};

struct ClassTooSmall : Error {
    explicit ClassTooSmall(const std::string& msg = "class has fewer rows than requested")
        : Error(msg) {}
};

struct TooFewSamples : Error {
    explicit TooFewSamples(const std::string& msg = "not enough samples") : Error(msg) {}
};

struct NoArdKernel : Error {
    explicit NoArdKernel(const std::string& msg = "kernel has no per-dimension lengthscales")
        : Error(msg) {}
};

struct DegenerateData : Error {
    explicit DegenerateData(const std::string& msg = "data has zero variance") : Error(msg) {}
};

// A diagonal covariance with a nonpositive entry is a special case of a
// non-positive-definite covariance, so this slots under NotPositiveDefinite.
struct NonPositiveVariance : NotPositiveDefinite {
    explicit NonPositiveVariance(const std::string& msg = "variance must be positive")
        : NotPositiveDefinite(msg) {}
};

struct LengthMismatch : Error {
    explicit LengthMismatch(const std::string& msg = "vector lengths differ") : Error(msg) {}
};

}  // namespace psilvm
