#pragma once

#include <stdexcept>
#include <string>

namespace covert {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: malformed distributions, models, parameters or files.
/// The CLI maps these to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// A numerical solve could not produce an answer. CLI exit code 3.
class SolverError : public Error {
public:
    using Error::Error;
};

class InvalidDistribution : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class AlphabetMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// p(x) > 0 where q(x) = 0, so the divergence is infinite.
class AbsoluteContinuityViolation : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class NonZeroNullMean : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InvalidModel : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class DomainError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// n, eta or zeta leave no room for a valid policy (alpha > 1 or a nonpositive threshold).
class BudgetTooSmall : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class NoChallenger : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class SteppedAfterStop : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class TooFewEpisodes : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class TooFewTraces : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class InsufficientCells : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class IoError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class SolverDiverged : public SolverError {
public:
    using SolverError::SolverError;
};

/// The chi-square denominator of a covert objective vanished.
class DegenerateDenominator : public SolverError {
public:
    using SolverError::SolverError;
};

}  // namespace covert
