#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "mflab/assignment.hpp"
#include "mflab/gaussian.hpp"

namespace mflab {

/// Squared-distance decomposition of the Gaussian W2 formula:
/// distance^2 = mean_part + trace_part.
struct W2Result {
    double distance = 0.0;
    double mean_part = 0.0;   // |mu1 - mu2|^2
    double trace_part = 0.0;  // tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2})
};

/// W2 between N(mu1,S1) and N(mu2,S2):
///   W^2 = |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}).
/// The inner product is symmetrized before the square root to absorb
/// round-off; the trace term is clamped at zero.
inline W2Result w2_gaussian(const GaussianState& a, const GaussianState& b) {
    validate_gaussian(a, "w2_gaussian");
    validate_gaussian(b, "w2_gaussian");
    if (a.dim() != b.dim()) throw ValidationError("w2_gaussian: dimensions differ");

    const SymMatrix root_a = sym_sqrt(a.cov);
    const SymMatrix inner =
        SymMatrix::symmetrized(root_a.mat() * b.cov.mat() * root_a.mat());
    const SymMatrix cross = sym_sqrt(inner);

    W2Result r;
    const Vector dm = vec_sub(a.mean, b.mean);
    r.mean_part = dot(dm, dm);
    r.trace_part = std::max(0.0, a.cov.trace() + b.cov.trace() - 2.0 * cross.trace());
    r.distance = std::sqrt(r.mean_part + r.trace_part);
    return r;
}

/// Bracket for W^2 (mean part included on both ends):
///   |dmu|^2 + 1/2 ||S1^{1/2}-S2^{1/2}||_F^2  <=  W^2  <=  |dmu|^2 + ||S1^{1/2}-S2^{1/2}||_F^2.
struct W2Sandwich {
    double lower = 0.0;
    double upper = 0.0;
};

inline W2Sandwich w2_gaussian_sandwich(const GaussianState& a, const GaussianState& b) {
    validate_gaussian(a, "w2_gaussian_sandwich");
    validate_gaussian(b, "w2_gaussian_sandwich");
    if (a.dim() != b.dim()) throw ValidationError("w2_gaussian_sandwich: dimensions differ");
    const Vector dm = vec_sub(a.mean, b.mean);
    const double mean_part = dot(dm, dm);
    const double root_gap =
        frobenius_norm(sym_sqrt(a.cov).mat() - sym_sqrt(b.cov).mat());
    W2Sandwich s;
    s.lower = mean_part + 0.5 * root_gap * root_gap;
    s.upper = mean_part + root_gap * root_gap;
    return s;
}

/// Optimal transport map between Gaussians, T(x) = linear * x + shift:
///   linear = S1^{-1/2} (S1^{1/2} S2 S1^{1/2})^{1/2} S1^{-1/2},
///   shift = mu2 - linear * mu1.
/// Requires a strictly positive-definite source covariance.
struct AffineMap {
    Matrix linear;
    Vector shift;

    Vector operator()(const Vector& x) const { return vec_add(linear * x, shift); }
};

inline AffineMap gaussian_optimal_map(const GaussianState& a, const GaussianState& b) {
    validate_gaussian(a, "gaussian_optimal_map");
    validate_gaussian(b, "gaussian_optimal_map");
    if (a.dim() != b.dim()) throw ValidationError("gaussian_optimal_map: dimensions differ");
    const SymMatrix root_a = sym_sqrt(a.cov);
    SymMatrix root_a_inv;
    try {
        root_a_inv = sym_inv(root_a);
    } catch (const NumericalError&) {
        throw NumericalError("gaussian_optimal_map: source covariance is singular");
    }
    const SymMatrix inner =
        SymMatrix::symmetrized(root_a.mat() * b.cov.mat() * root_a.mat());
    AffineMap map;
    map.linear = root_a_inv.mat() * sym_sqrt(inner).mat() * root_a_inv.mat();
    map.shift = vec_sub(b.mean, map.linear * a.mean);
    return map;
}

/// Lipschitz factor of a nonsingular linear pushforward on W2:
/// W2(A#f, A#g) <= sqrt(||A^T A||_2) W2(f, g), and sqrt(||A^T A||_2) = ||A||_2.
inline double w2_pushforward_factor(const Matrix& a) {
    return op_norm2(a);
}

/// W2(A#f, B#f) <= ||A - B||_2 sqrt(tr C(f) + |M(f)|^2) for one density f with
/// the stated first two moments.
inline double w2_same_density_linear_bound(const Matrix& a, const Matrix& b, const Vector& mean,
                                           const SymMatrix& cov) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw ValidationError("w2_same_density_linear_bound: matrix shapes differ");
    if (!check_spd(cov).is_spd)
        throw ValidationError("w2_same_density_linear_bound: covariance not PSD");
    return op_norm2(a - b) * std::sqrt(cov.trace() + dot(mean, mean));
}

namespace detail {

inline double paired_mean_square(const Matrix& x, const Matrix& y,
                                 const std::vector<std::size_t>& row_to_col) {
    double total = 0.0;
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const std::size_t j = row_to_col[i];
        double s = 0.0;
        for (std::size_t k = 0; k < x.cols(); ++k) {
            const double diff = x(i, k) - y(j, k);
            s += diff * diff;
        }
        total += s;
    }
    return total / static_cast<double>(x.rows());
}

}  // namespace detail

/// Exact empirical W2 between two equal-size point sets (rows are points),
/// always via the assignment solver. Exposed separately so the d = 1 fast
/// path of w2_empirical can be cross-checked against it.
inline double w2_empirical_assignment(const Matrix& x, const Matrix& y) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError("w2_empirical: point sets must have equal shape");
    const std::size_t n = x.rows();
    if (n == 0 || x.cols() == 0) throw ValidationError("w2_empirical: empty point set");
    Matrix cost(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < x.cols(); ++k) {
                const double diff = x(i, k) - y(j, k);
                s += diff * diff;
            }
            cost(i, j) = s;
        }
    const std::vector<std::size_t> match = min_cost_assignment(cost);
    return std::sqrt(detail::paired_mean_square(x, y, match));
}

/// Empirical W2 with the sorted pairing shortcut in one dimension (monotone
/// couplings are optimal on the line). J is capped because the assignment
/// solver is cubic.
inline double w2_empirical(const Matrix& x, const Matrix& y, std::size_t cap = 4096) {
    if (x.rows() != y.rows() || x.cols() != y.cols())
        throw ValidationError("w2_empirical: point sets must have equal shape");
    const std::size_t n = x.rows();
    if (n == 0 || x.cols() == 0) throw ValidationError("w2_empirical: empty point set");
    if (n > cap) throw ResourceError("w2_empirical: point count exceeds cap");

    if (x.cols() == 1) {
        Vector a(n), b(n);
        for (std::size_t i = 0; i < n; ++i) {
            a[i] = x(i, 0);
            b[i] = y(i, 0);
        }
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double diff = a[i] - b[i];
            total += diff * diff;
        }
        return std::sqrt(total / static_cast<double>(n));
    }
    return w2_empirical_assignment(x, y);
}

}  // namespace mflab
