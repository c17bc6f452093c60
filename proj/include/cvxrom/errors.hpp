#pragma once

#include <stdexcept>
#include <string>

namespace cvxrom {

/// Base for every domain error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    using Error::Error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class InvalidArgument : public Error {
public:
    using Error::Error;
};

class DegenerateElementError : public Error {
public:
    DegenerateElementError(int element, const std::string& what)
        : Error(what), element_(element) {}
    int element() const noexcept { return element_; }

private:
    int element_;
};

/// Newton / line-search failure. Carries the residual norm at the point of failure.
class SolverError : public Error {
public:
    SolverError(const std::string& what, double residual, int iterations)
        : Error(what), residual_(residual), iterations_(iterations) {}
    double residual() const noexcept { return residual_; }
    int iterations() const noexcept { return iterations_; }

private:
    double residual_;
    int iterations_;
};

/// Raised when a basis of the requested rank cannot be built; reports the rank achieved.
class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(const std::string& what, int achieved_rank) : Error(what), achieved_rank_(achieved_rank) {}
    int achieved_rank() const noexcept { return achieved_rank_; }

private:
    int achieved_rank_;
};

inline void require_dims(bool ok, const std::string& what) {
    if (!ok) throw DimensionError(what);
}

} // namespace cvxrom
