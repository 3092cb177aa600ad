#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "mflab/problem.hpp"

namespace mflab {

/// First two moments of the mean-field solution: offset delta(t) = mean - u0
/// and covariance C(t). C stays SPD whenever C(0) is SPD.
struct MomentState {
    double t = 0.0;
    Vector delta;
    SymMatrix cov;
};

struct MomentRhs {
    Vector ddelta;
    SymMatrix dcov;
};

/// Instance constants feeding the decay bounds: M bounds the covariances and
/// B in operator norm, m bounds their inverses, R bounds the initial offsets.
struct BoundConstants {
    double big = 0.0;     // M
    double small = 0.0;   // m
    double radius = 0.0;  // R

    void validate() const {
        if (!(big > 0.0) || !(small > 0.0) || !(radius > 0.0))
            throw ValidationError("bound constants: m, M, R must be positive");
        if (small * big < 1.0)
            throw ValidationError("bound constants: m*M >= 1 must hold");
    }
};

/// Fundamental matrix of the mean equation on [s, t].
struct Propagator {
    double s = 0.0;
    double t = 0.0;
    Matrix u;
};

/// The scalar decay envelope: 2t+1 when sigma = 0, otherwise
/// (1 - e^{-2 sigma t})/sigma + e^{-2 sigma t}. Continuous in sigma at 0.
inline double envelope_alpha(double sigma, double t) {
    if (sigma == 0.0) return 2.0 * t + 1.0;
    const double e = std::exp(-2.0 * sigma * t);
    return (1.0 - e) / sigma + e;
}

/// Exact covariance solution:
///   C(t) = ((1-e^{-2 sigma t})/sigma B^-1 + e^{-2 sigma t} C0^-1)^-1   (sigma > 0)
///   C(t) = (2 t B^-1 + C0^-1)^-1                                       (sigma = 0)
inline SymMatrix covariance_closed_form(const Dynamics& dyn, const SymMatrix& c0, double t) {
    if (c0.dim() != dyn.dim()) throw ValidationError("covariance_closed_form: C0 has wrong dimension");
    if (!(check_spd(c0).min_eigenvalue > 0.0))
        throw ValidationError("covariance_closed_form: C0 is not positive definite");
    const SymMatrix c0_inv = sym_inv(c0);
    const SymMatrix& binv = dyn.posterior.precision;
    double wb, wc;
    if (dyn.sigma == 0.0) {
        wb = 2.0 * t;
        wc = 1.0;
    } else {
        const double e = std::exp(-2.0 * dyn.sigma * t);
        wb = (1.0 - e) / dyn.sigma;
        wc = e;
    }
    return sym_inv(binv * wb + c0_inv * wc);
}

/// Right-hand side of the closed moment system. The covariance derivative is
/// assembled as -(C B^-1 C + (C B^-1 C)^T) + 2 sigma C so round-off cannot
/// push the state off the symmetric manifold.
inline MomentRhs moment_rhs(const Dynamics& dyn, const MomentState& st) {
    const Matrix cb = st.cov.mat() * dyn.posterior.precision.mat();
    const Matrix cbc = cb * st.cov.mat();
    MomentRhs rhs;
    rhs.ddelta = vec_scale(cb * st.delta, -1.0);
    SymMatrix dcov = SymMatrix::symmetrized(cbc) * -2.0;
    if (dyn.sigma != 0.0) dcov += st.cov * (2.0 * dyn.sigma);
    rhs.dcov = std::move(dcov);
    return rhs;
}

/// Default RK4 step: stiffness is set by ||C B^-1||, so scale 1e-3 by it.
inline double default_moment_step(const Dynamics& dyn, const SymMatrix& c0) {
    const double scale = op_norm2(dyn.posterior.precision) * op_norm2(c0);
    return 1e-3 * std::min(1.0, 1.0 / std::max(scale, 1e-300));
}

namespace detail {

inline void check_cov_still_psd(const SymMatrix& cov, double h) {
    for (double v : cov.mat().data())
        if (!std::isfinite(v))
            throw NumericalError("integrate_moments: covariance diverged (step h=" +
                                 std::to_string(h) + " too large)");
    // Cheap positive-definiteness probe: Cholesky of C + clamp*I.
    const double shift = 1e-10 * std::max(1.0, frobenius_norm(cov));
    SymMatrix shifted = cov;
    for (std::size_t i = 0; i < cov.dim(); ++i) shifted.set(i, i, cov(i, i) + shift);
    try {
        cholesky_lower(shifted);
    } catch (const NumericalError&) {
        throw NumericalError("integrate_moments: covariance lost positive definiteness (step h=" +
                             std::to_string(h) + " too large)");
    }
}

inline MomentState rk4_moment_step(const Dynamics& dyn, const MomentState& st, double h) {
    const MomentRhs k1 = moment_rhs(dyn, st);

    MomentState mid;
    mid.t = st.t + 0.5 * h;
    mid.delta = st.delta;
    vec_axpy(mid.delta, 0.5 * h, k1.ddelta);
    mid.cov = st.cov + k1.dcov * (0.5 * h);
    const MomentRhs k2 = moment_rhs(dyn, mid);

    mid.delta = st.delta;
    vec_axpy(mid.delta, 0.5 * h, k2.ddelta);
    mid.cov = st.cov + k2.dcov * (0.5 * h);
    const MomentRhs k3 = moment_rhs(dyn, mid);

    MomentState end;
    end.t = st.t + h;
    end.delta = st.delta;
    vec_axpy(end.delta, h, k3.ddelta);
    end.cov = st.cov + k3.dcov * h;
    const MomentRhs k4 = moment_rhs(dyn, end);

    MomentState out;
    out.t = st.t + h;
    out.delta = st.delta;
    for (std::size_t i = 0; i < out.delta.size(); ++i)
        out.delta[i] += (h / 6.0) * (k1.ddelta[i] + 2.0 * k2.ddelta[i] + 2.0 * k3.ddelta[i] + k4.ddelta[i]);
    out.cov = SymMatrix::symmetrized(
        st.cov.mat() +
        (k1.dcov.mat() + k2.dcov.mat() * 2.0 + k3.dcov.mat() * 2.0 + k4.dcov.mat()) * (h / 6.0));
    return out;
}

}  // namespace detail

/// Classical fixed-step RK4 on (delta, C); the last partial step is shortened
/// to land exactly on t_end.
inline MomentState integrate_moments(const Dynamics& dyn, MomentState init, double t_end, double h) {
    if (h <= 0.0) throw ValidationError("integrate_moments: h must be positive");
    if (t_end < init.t) throw ValidationError("integrate_moments: t_end before initial time");
    if (init.delta.size() != dyn.dim() || init.cov.dim() != dyn.dim())
        throw ValidationError("integrate_moments: state has wrong dimension");

    const double span = t_end - init.t;
    const auto n_full = static_cast<std::size_t>(std::floor(span / h));
    for (std::size_t k = 0; k < n_full; ++k) {
        init = detail::rk4_moment_step(dyn, init, h);
        detail::check_cov_still_psd(init.cov, h);
    }
    const double rest = t_end - init.t;
    if (rest > 1e-15 * std::max(1.0, std::fabs(t_end))) {
        init = detail::rk4_moment_step(dyn, init, rest);
        detail::check_cov_still_psd(init.cov, rest);
    }
    init.t = t_end;
    return init;
}

/// Same integration, recording the state at each requested grid time
/// (ascending, grid[0] >= init.t). Grid points are hit exactly.
inline std::vector<MomentState> integrate_moments_record(const Dynamics& dyn, MomentState init,
                                                         const std::vector<double>& grid, double h) {
    std::vector<MomentState> out;
    out.reserve(grid.size());
    for (double tg : grid) {
        init = integrate_moments(dyn, init, tg, h);
        out.push_back(init);
    }
    return out;
}

/// U(0, t_k) for an ascending checkpoint list, one RK4 pass of
/// dU/dtau = -C(tau) B^-1 U with C(tau) from the closed form. Each checkpoint
/// interval is subdivided into equal substeps no larger than h.
inline std::vector<Matrix> propagator_checkpoints(const Dynamics& dyn, const SymMatrix& c0,
                                                  const std::vector<double>& ts, double h) {
    if (h <= 0.0) throw ValidationError("propagator: h must be positive");
    const std::size_t d = dyn.dim();
    const SymMatrix c0_inv = sym_inv(c0);  // validates SPD via Cholesky
    const SymMatrix& binv = dyn.posterior.precision;

    // drift matrix A(tau) = -C(tau) B^-1, with C(tau) from the closed form
    const auto drift_at = [&](double tau) -> Matrix {
        double wb, wc;
        if (dyn.sigma == 0.0) {
            wb = 2.0 * tau;
            wc = 1.0;
        } else {
            const double e = std::exp(-2.0 * dyn.sigma * tau);
            wb = (1.0 - e) / dyn.sigma;
            wc = e;
        }
        return sym_inv(binv * wb + c0_inv * wc).mat() * binv.mat() * -1.0;
    };

    std::vector<Matrix> out;
    out.reserve(ts.size());
    Matrix u = Matrix::identity(d);
    Matrix drift_left = drift_at(0.0);
    double t_cur = 0.0;
    for (double target : ts) {
        if (target < t_cur - 1e-12) throw ValidationError("propagator: checkpoint times must ascend from 0");
        const double span = target - t_cur;
        if (span > 0.0) {
            const std::size_t nsub = static_cast<std::size_t>(std::ceil(span / h - 1e-12));
            const double hs = span / static_cast<double>(nsub);
            for (std::size_t k = 0; k < nsub; ++k) {
                const double tau = t_cur + hs * static_cast<double>(k);
                const Matrix drift_mid = drift_at(tau + 0.5 * hs);
                const Matrix drift_right = drift_at(tau + hs);
                const Matrix k1 = drift_left * u;
                const Matrix k2 = drift_mid * (u + k1 * (0.5 * hs));
                const Matrix k3 = drift_mid * (u + k2 * (0.5 * hs));
                const Matrix k4 = drift_right * (u + k3 * hs);
                u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (hs / 6.0);
                drift_left = drift_right;
            }
            t_cur = target;
        }
        out.push_back(u);
    }
    return out;
}

/// U(s, t): one pass when s = 0; otherwise composed as U(0,t) U(0,s)^-1,
/// which reuses a single forward integration for any (s, t) pair.
inline Propagator propagator(const Dynamics& dyn, const SymMatrix& c0, double s, double t, double h) {
    if (s < 0.0 || t < s) throw ValidationError("propagator: need 0 <= s <= t");
    Propagator p;
    p.s = s;
    p.t = t;
    if (t == s) {
        p.u = Matrix::identity(dyn.dim());
        return p;
    }
    if (s == 0.0) {
        p.u = propagator_checkpoints(dyn, c0, {t}, h).front();
    } else {
        const std::vector<Matrix> cps = propagator_checkpoints(dyn, c0, {s, t}, h);
        p.u = cps[1] * inverse(cps[0]);
    }
    return p;
}

/// Operator-norm envelope for the fundamental matrix:
/// e^{-sigma (t-s)} sqrt(alpha(s)/alpha(t)) sqrt(max(||C0||,||B||)) sqrt(max(||C0^-1||,||B^-1||)).
inline double propagator_norm_bound(const Dynamics& dyn, const SymMatrix& c0, double s, double t) {
    if (t < s) throw ValidationError("propagator_norm_bound: need t >= s");
    const double big = std::max(op_norm2(c0), op_norm2(dyn.posterior.b));
    const double small = std::max(op_norm2(sym_inv(c0)), op_norm2(dyn.posterior.precision));
    return std::exp(-dyn.sigma * (t - s)) *
           std::sqrt(envelope_alpha(dyn.sigma, s) / envelope_alpha(dyn.sigma, t)) *
           std::sqrt(big) * std::sqrt(small);
}

/// Constants valid for a pair of initial moment states under a given dynamics.
inline BoundConstants bound_constants(const Dynamics& dyn, const MomentState& a, const MomentState& b) {
    BoundConstants c;
    c.big = std::max({op_norm2(a.cov), op_norm2(b.cov), op_norm2(dyn.posterior.b)});
    c.small = std::max({op_norm2(sym_inv(a.cov)), op_norm2(sym_inv(b.cov)),
                        op_norm2(dyn.posterior.precision)});
    c.radius = std::max(norm2(a.delta), norm2(b.delta));
    return c;
}

struct MomentGapBounds {
    double cov_bound = 0.0;
    double mean_bound = 0.0;
};

/// Decay envelopes for the gap between two moment solutions started at a, b:
///   ||C1(t)-C2(t)||_F  <= M^2 m^2 ||C1(0)-C2(0)||_F e^{-2 sigma t} / alpha(t)^2
///   ||d1(t)-d2(t)||    <= (sqrt(mM) ||d1(0)-d2(0)|| + m^4 M^3 R ||C2(0)-C1(0)||_F / 2)
///                         e^{-sigma t} / sqrt(alpha(t))
inline MomentGapBounds moment_gap_bounds(const Dynamics& dyn, const MomentState& a,
                                         const MomentState& b, const BoundConstants& consts,
                                         double t) {
    consts.validate();
    const double alpha = envelope_alpha(dyn.sigma, t);
    const double dcov = frobenius_norm(a.cov.mat() - b.cov.mat());
    const double dmean = norm2(vec_sub(a.delta, b.delta));
    const double m = consts.small, big = consts.big, radius = consts.radius;

    MomentGapBounds g;
    g.cov_bound = big * big * m * m * dcov * std::exp(-2.0 * dyn.sigma * t) / (alpha * alpha);
    g.mean_bound = (std::sqrt(m * big) * dmean +
                    0.5 * std::pow(m, 4) * std::pow(big, 3) * radius * dcov) *
                   std::exp(-dyn.sigma * t) / std::sqrt(alpha);
    return g;
}

/// ||U2(s,t) - U1(s,t)||_2 <= m^4 M^3 ||C2(0)-C1(0)||_F e^{-sigma(s+t)} / sqrt(alpha(s) alpha(t)).
inline double propagator_gap_bound(const Dynamics& dyn, const BoundConstants& consts,
                                   const SymMatrix& c1_0, const SymMatrix& c2_0, double s, double t) {
    if (t < s) throw ValidationError("propagator_gap_bound: need t >= s");
    consts.validate();
    const double dcov = frobenius_norm(c2_0.mat() - c1_0.mat());
    return std::pow(consts.small, 4) * std::pow(consts.big, 3) * dcov *
           std::exp(-dyn.sigma * (s + t)) /
           std::sqrt(envelope_alpha(dyn.sigma, s) * envelope_alpha(dyn.sigma, t));
}

}  // namespace mflab
