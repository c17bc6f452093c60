#pragma once

// Finite-difference and random-data helpers shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>

#include "cvxrom/types.hpp"

namespace cvxrom::testing {

inline Vec random_vec(Index n, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> nd(0.0, scale);
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = nd(rng);
    return v;
}

inline Vec uniform_vec(Index n, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> ud(lo, hi);
    Vec v(n);
    for (Index i = 0; i < n; ++i) v[i] = ud(rng);
    return v;
}

/// Central differences of a scalar function with respect to every entry of x (in place, restored).
inline Vec fd_gradient(const std::function<double()>& f, std::span<double> x, double h) {
    Vec g(static_cast<Index>(x.size()));
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double fp = f();
        x[i] = keep - h;
        const double fm = f();
        x[i] = keep;
        g[static_cast<Index>(i)] = (fp - fm) / (2.0 * h);
    }
    return g;
}

/// Central-difference Jacobian of a vector function at x.
inline Mat fd_jacobian(const std::function<Vec(const Vec&)>& f, const Vec& x, double h) {
    const Vec f0 = f(x);
    Mat J(f0.size(), x.size());
    for (Index j = 0; j < x.size(); ++j) {
        Vec xp = x, xm = x;
        xp[j] += h;
        xm[j] -= h;
        J.col(j) = (f(xp) - f(xm)) / (2.0 * h);
    }
    return J;
}

/// max |a - b| / max(|b|_max, floor)
inline double relative_error(const Mat& a, const Mat& b, double floor = 1.0) {
    const double scale = std::max(b.cwiseAbs().maxCoeff(), floor);
    return (a - b).cwiseAbs().maxCoeff() / scale;
}

} // namespace cvxrom::testing
