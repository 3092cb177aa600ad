#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "mflab/random.hpp"
#include "mflab/ratefit.hpp"
#include "mflab/wasserstein.hpp"

namespace mflab {

/// W2 trajectory between two evolving solutions, the analytic decay envelope,
/// their pointwise ratio, and a fitted decay exponent.
struct StabilityReport {
    std::vector<double> t_grid;
    std::vector<double> w2;
    std::vector<double> envelope;
    std::vector<double> ratio;
    double fitted_rate = std::numeric_limits<double>::quiet_NaN();
};

/// Decay rate of the W2 stability estimate:
///   e^{-sigma t} / alpha(t)^{(1 + floor(min(1, sigma)))/2}.
/// sigma = 0: alpha^{-1/2}; sigma >= 1: e^{-sigma t}/alpha(t);
/// 0 < sigma < 1: e^{-sigma t}/sqrt(alpha(t)).
inline double w2_decay_rate(double sigma, double t) {
    if (t < 0.0) throw ValidationError("w2_decay_rate: t must be >= 0");
    const double alpha = envelope_alpha(sigma, t);
    const double power = 0.5 * (1.0 + std::floor(std::min(1.0, sigma)));
    return std::exp(-sigma * t) / std::pow(alpha, power);
}

namespace detail {

inline void fill_ratio(StabilityReport& rep) {
    rep.ratio.resize(rep.w2.size());
    for (std::size_t i = 0; i < rep.w2.size(); ++i) {
        if (rep.envelope[i] > 0.0) {
            rep.ratio[i] = rep.w2[i] / rep.envelope[i];
        } else {
            // a zero envelope means identical initial states; the computed W2
            // then carries sqrt(eps * trace) round-off, nothing more
            if (rep.w2[i] > 1e-6)
                throw InvariantViolation("stability: zero envelope with nonzero W2");
            rep.ratio[i] = 0.0;
        }
    }
}

}  // namespace detail

/// Both solutions ride the same prescribed covariance flow (shared C0), so
///   W2(f1_t, f2_t) <= ||U(0,t)||_2 W2(f1_0, f2_0)
/// holds exactly; the report asserts it pointwise on the grid.
inline StabilityReport linear_fp_stability(const Dynamics& dyn, const SymMatrix& c0,
                                           const GaussianState& f1, const GaussianState& f2,
                                           const std::vector<double>& t_grid,
                                           std::size_t panels = 0, double h = 0.0) {
    if (h <= 0.0) h = default_moment_step(dyn, c0);
    StabilityReport rep;
    rep.t_grid = t_grid;
    const double w2_init = w2_gaussian(f1, f2).distance;
    for (double t : t_grid) {
        const GaussianState a = propagate_linear_fp(dyn, c0, f1, t, panels, h);
        const GaussianState b = propagate_linear_fp(dyn, c0, f2, t, panels, h);
        const double w2 = w2_gaussian(a, b).distance;
        const Matrix u = propagator(dyn, c0, 0.0, t, h).u;
        const double env = op_norm2(u) * w2_init;
        rep.w2.push_back(w2);
        rep.envelope.push_back(env);
        // squared comparison with an absolute allowance for the eps-level
        // noise of the trace terms (dominant when the two states coincide)
        const double noise2 = 1e-13 * std::max(1.0, a.cov.trace() + b.cov.trace());
        if (w2 * w2 > env * env * (1.0 + 1e-8) + noise2)
            throw InvariantViolation("linear_fp_stability: W2 exceeded the propagator envelope at t=" +
                                     std::to_string(t));
    }
    detail::fill_ratio(rep);
    return rep;
}

/// Two self-consistent mean-field Gaussian solutions; envelope is the decay
/// rate times the initial distance. fitted_rate is the OLS slope of log W2
/// against t (sigma > 0) or log alpha(t) (sigma = 0) over the trailing
/// fit_window fraction of the grid.
inline StabilityReport mean_field_stability(const Dynamics& dyn, const GaussianState& f1,
                                            const GaussianState& f2,
                                            const std::vector<double>& t_grid,
                                            double fit_window = 0.5, double h = 0.0) {
    StabilityReport rep;
    rep.t_grid = t_grid;
    const double w2_init = w2_gaussian(f1, f2).distance;

    // one propagator pass per solution over the whole grid
    const std::vector<Matrix> u1 = propagator_checkpoints(
        dyn, f1.cov, t_grid, h > 0.0 ? h : default_moment_step(dyn, f1.cov));
    const std::vector<Matrix> u2 = propagator_checkpoints(
        dyn, f2.cov, t_grid, h > 0.0 ? h : default_moment_step(dyn, f2.cov));
    const Vector& u0 = dyn.posterior.minimizer;

    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        GaussianState a, b;
        a.mean = vec_add(u0, u1[i] * vec_sub(f1.mean, u0));
        a.cov = covariance_closed_form(dyn, f1.cov, t_grid[i]);
        b.mean = vec_add(u0, u2[i] * vec_sub(f2.mean, u0));
        b.cov = covariance_closed_form(dyn, f2.cov, t_grid[i]);
        rep.w2.push_back(w2_gaussian(a, b).distance);
        rep.envelope.push_back(w2_decay_rate(dyn.sigma, t_grid[i]) * w2_init);
    }
    detail::fill_ratio(rep);

    bool all_positive = true;
    for (double v : rep.w2)
        if (v < 1e-300) all_positive = false;
    if (all_positive && t_grid.size() >= 4)
        rep.fitted_rate = fit_rate(rep.t_grid, rep.w2, fit_window, dyn.sigma).slope;
    return rep;
}

/// Scaled distance to equilibrium e^{sigma t} W2(f_t, f_inf) over the grid,
/// sandwiched between
///   lower(t) = |delta(0)| / (m M alpha(t))      (mean lower bound), and
///   upper(t) = e^{sigma t} sqrt(|delta(t)|^2 + ||Sigma(t)^{1/2} - (sigma B)^{1/2}||_F^2)
/// (Gaussian W2 upper bound), both computed from the instance. Violations
/// throw; the diagnostic vector is returned for reporting.
struct SharpnessReport {
    std::vector<double> t_grid;
    std::vector<double> scaled_w2;  // e^{sigma t} W2(f_t, f_inf)
    std::vector<double> lower;
    std::vector<double> upper;
};

inline SharpnessReport sharpness_diagnostic(const Dynamics& dyn, const GaussianState& f0,
                                            const std::vector<double>& t_grid, double h = 0.0) {
    if (!(dyn.sigma > 0.0)) throw ValidationError("sharpness_diagnostic: needs sigma > 0");
    const GaussianState f_inf = equilibrium(dyn);
    const Vector delta0 = vec_sub(f0.mean, dyn.posterior.minimizer);

    MomentState init;
    init.delta = delta0;
    init.cov = f0.cov;
    const BoundConstants consts = bound_constants(dyn, init, init);
    const SymMatrix eq_root = sym_sqrt(f_inf.cov);

    const std::vector<Matrix> u_cp = propagator_checkpoints(
        dyn, f0.cov, t_grid, h > 0.0 ? h : default_moment_step(dyn, f0.cov));

    SharpnessReport rep;
    rep.t_grid = t_grid;
    const Vector& u0 = dyn.posterior.minimizer;
    for (std::size_t i = 0; i < t_grid.size(); ++i) {
        const double t = t_grid[i];
        GaussianState ft;
        ft.mean = vec_add(u0, u_cp[i] * delta0);
        ft.cov = covariance_closed_form(dyn, f0.cov, t);

        const double scale = std::exp(dyn.sigma * t);
        const W2Result w2 = w2_gaussian(ft, f_inf);
        const double delta_t = norm2(vec_sub(ft.mean, u0));
        const double root_gap = frobenius_norm(sym_sqrt(ft.cov).mat() - eq_root.mat());

        rep.scaled_w2.push_back(scale * w2.distance);
        rep.lower.push_back(norm2(delta0) /
                            (consts.small * consts.big * envelope_alpha(dyn.sigma, t)));
        rep.upper.push_back(scale * std::sqrt(delta_t * delta_t + root_gap * root_gap));

        if (!std::isfinite(rep.upper.back()))
            throw InvariantViolation("sharpness_diagnostic: upper envelope not finite");
        if (rep.scaled_w2.back() < rep.lower[i] * (1.0 - 1e-8))
            throw InvariantViolation(
                "sharpness_diagnostic: scaled W2 fell below the lower envelope at t=" +
                std::to_string(t));
        // The upper comparison works on squared distances: the trace terms on
        // both sides decay below the eps * trace(Sigma) noise of the trace
        // computation at large t, so an absolute round-off allowance is needed
        // in addition to the relative slack.
        const double lhs2 = w2.mean_part + w2.trace_part;
        const double rhs2 = delta_t * delta_t + root_gap * root_gap;
        const double noise2 = 1e-13 * std::max(1.0, ft.cov.trace() + f_inf.cov.trace());
        if (lhs2 > rhs2 * (1.0 + 1e-8) + noise2)
            throw InvariantViolation(
                "sharpness_diagnostic: scaled W2 exceeded the upper envelope at t=" +
                std::to_string(t));
    }
    return rep;
}

// ---- square-root metric inequalities (randomized property check) -----------------

/// sup_{|x|=1} | |A x| - |B x| | estimated over a candidate vector pool.
/// A lower estimate of the true supremum.
inline double sup_norm_gap(const Matrix& a, const Matrix& b, const std::vector<Vector>& pool) {
    double best = 0.0;
    for (const Vector& x : pool)
        best = std::max(best, std::fabs(norm2(a * x) - norm2(b * x)));
    return best;
}

struct SqrtInequalityReport {
    std::size_t trials = 0;
    std::size_t violations_concavity = 0;   // shift inequality in the sup metric
    std::size_t violations_bridge = 0;      // ||M1-M2||_2 vs sqrt-gap bridge
    double worst_frobenius_ratio = 0.0;     // empirical lower estimate of the
                                            // dimension constant, reported only
};

namespace detail {

inline SymMatrix random_psd(std::size_t d, NoiseStream& rng, double lo, double hi) {
    // random orthogonal-ish basis from a QR-free construction: eigenvectors of
    // a random symmetric matrix, eigenvalues uniform in [lo, hi]
    Matrix raw(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t j = 0; j < d; ++j) raw(i, j) = rng.normal();
    const SymEigen basis = sym_eigen(SymMatrix::symmetrized(raw));
    Vector lam(d);
    for (double& v : lam) v = lo + (hi - lo) * rng.uniform();
    Matrix scaled(d, d);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < d; ++k) scaled(i, k) = basis.vectors(i, k) * lam[k];
    return SymMatrix::symmetrized(scaled * basis.vectors.transposed());
}

inline void append_unit_columns(std::vector<Vector>& pool, const Matrix& columns) {
    for (std::size_t k = 0; k < columns.cols(); ++k) {
        Vector x(columns.rows());
        for (std::size_t i = 0; i < columns.rows(); ++i) x[i] = columns(i, k);
        const double n = norm2(x);
        if (n > 0.0) pool.push_back(vec_scale(x, 1.0 / n));
    }
}

}  // namespace detail

/// Randomized check of two square-root inequalities on PSD triples
/// (M, M1, M2), in the sup-metric form their derivations actually use:
///   gap((M+M1)^{1/2}, (M+M2)^{1/2}) <= gap(M1^{1/2}, M2^{1/2})
///   ||M1 - M2||_2 <= (||M1^{1/2}||_2 + ||M2^{1/2}||_2) * gap(M1^{1/2}, M2^{1/2})
/// The candidate pool mixes random unit vectors with the eigenvectors of every
/// matrix involved (in particular of M1 - M2, which realizes the supremum the
/// second inequality needs).
inline SqrtInequalityReport check_sqrt_inequalities(std::size_t trials, std::size_t dim,
                                                    NoiseStream& rng,
                                                    std::size_t pool_random = 1000,
                                                    double slack = 1e-8) {
    if (trials < 1) throw ValidationError("check_sqrt_inequalities: trials must be >= 1");
    if (dim < 1) throw ValidationError("check_sqrt_inequalities: dim must be >= 1");

    SqrtInequalityReport rep;
    rep.trials = trials;
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const SymMatrix m = detail::random_psd(dim, rng, 0.0, 2.0);
        const SymMatrix m1 = detail::random_psd(dim, rng, 0.0, 2.0);
        const SymMatrix m2 = detail::random_psd(dim, rng, 0.0, 2.0);

        const SymMatrix r1 = sym_sqrt(m1);
        const SymMatrix r2 = sym_sqrt(m2);
        const SymMatrix s1 = sym_sqrt(m + m1);
        const SymMatrix s2 = sym_sqrt(m + m2);

        std::vector<Vector> pool;
        pool.reserve(pool_random + 6 * dim);
        for (std::size_t i = 0; i < pool_random; ++i) {
            Vector x = rng.normal_vector(dim);
            const double n = norm2(x);
            if (n > 0.0) pool.push_back(vec_scale(x, 1.0 / n));
        }
        detail::append_unit_columns(pool, sym_eigen(m1 - m2).vectors);
        detail::append_unit_columns(pool, sym_eigen(SymMatrix::symmetrized(s1.mat() - s2.mat())).vectors);
        detail::append_unit_columns(pool, sym_eigen(SymMatrix::symmetrized(r1.mat() - r2.mat())).vectors);
        detail::append_unit_columns(pool, sym_eigen(m1).vectors);
        detail::append_unit_columns(pool, sym_eigen(m2).vectors);
        detail::append_unit_columns(pool, sym_eigen(m).vectors);

        const double gap_shifted = sup_norm_gap(s1.mat(), s2.mat(), pool);
        const double gap_roots = sup_norm_gap(r1.mat(), r2.mat(), pool);
        if (gap_shifted > gap_roots + slack) rep.violations_concavity += 1;

        const double lhs = op_norm2(m1 - m2);
        const double rhs = (op_norm2(r1) + op_norm2(r2)) * gap_roots;
        if (lhs > rhs + slack) rep.violations_bridge += 1;

        const double denom = frobenius_norm(r1.mat() - r2.mat());
        if (denom > 1e-12) {
            const double ratio = frobenius_norm(s1.mat() - s2.mat()) / denom;
            rep.worst_frobenius_ratio = std::max(rep.worst_frobenius_ratio, ratio);
        }
    }
    return rep;
}

}  // namespace mflab
