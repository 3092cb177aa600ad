#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mflab/moments.hpp"

namespace mflab {

/// A Gaussian N(mean, cov) used as an exact solution of the flows. cov is PSD;
/// cov = 0 is a legal terminal (Dirac) state of sigma = 0 flows.
struct GaussianState {
    Vector mean;
    SymMatrix cov;

    std::size_t dim() const { return mean.size(); }
};

inline void validate_gaussian(const GaussianState& g, const char* who) {
    if (g.mean.size() != g.cov.dim())
        throw ValidationError(std::string(who) + ": mean/cov dimensions differ");
    if (!check_spd(g.cov).is_spd)
        throw ValidationError(std::string(who) + ": covariance is not positive semidefinite");
}

/// Default Simpson panel count for the covariance integral; shares the RK4
/// checkpoint grid. ceil(64 t), clamped to [2, 1e5].
inline std::size_t default_quadrature_panels(double t) {
    const double p = std::ceil(64.0 * t);
    if (p < 2.0) return 2;
    if (p > 1e5) return 100000;
    return static_cast<std::size_t>(p);
}

/// Exact solution of the linear Fokker-Planck flow with prescribed covariance
/// trajectory C(t) started from C0:
///   mean(t) = u0 + U(0,t) (mean0 - u0)
///   cov(t)  = U(0,t) cov0 U(0,t)^T + 2 sigma \int_0^t U(s,t) C(s) U(s,t)^T ds
/// The integral is a composite Simpson rule on a uniform grid whose nodes are
/// the propagator checkpoints; U(s,t) = U(0,t) U(0,s)^-1.
inline GaussianState propagate_linear_fp(const Dynamics& dyn, const SymMatrix& c0,
                                         const GaussianState& init, double t,
                                         std::size_t panels = 0, double h = 0.0) {
    validate_gaussian(init, "propagate_linear_fp");
    if (init.dim() != dyn.dim())
        throw ValidationError("propagate_linear_fp: state dimension differs from problem");
    if (t < 0.0) throw ValidationError("propagate_linear_fp: t must be >= 0");
    if (panels == 0) panels = default_quadrature_panels(t);
    if (panels < 2) throw ConfigError("propagate_linear_fp: need at least 2 quadrature panels");
    if (h <= 0.0) h = default_moment_step(dyn, c0);
    if (t == 0.0) return init;

    const std::size_t d = dyn.dim();
    const std::size_t nodes = 2 * panels + 1;
    std::vector<double> ts(nodes);
    for (std::size_t k = 0; k < nodes; ++k)
        ts[k] = t * static_cast<double>(k) / static_cast<double>(nodes - 1);

    const std::vector<Matrix> u0k = propagator_checkpoints(dyn, c0, ts, h);
    const Matrix& u_t = u0k.back();

    GaussianState out;
    const Vector& u0 = dyn.posterior.minimizer;
    out.mean = vec_add(u0, u_t * vec_sub(init.mean, u0));

    Matrix cov_accum = u_t * init.cov.mat() * u_t.transposed();
    if (dyn.sigma > 0.0) {
        const double ds = t / static_cast<double>(nodes - 1);
        Matrix integral(d, d);
        for (std::size_t k = 0; k < nodes; ++k) {
            const Matrix u_st = u_t * inverse(u0k[k]);
            const Matrix term = u_st * covariance_closed_form(dyn, c0, ts[k]).mat() * u_st.transposed();
            const double w = (k == 0 || k == nodes - 1) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
            integral += term * w;
        }
        cov_accum += integral * (2.0 * dyn.sigma * ds / 3.0);
    }
    out.cov = SymMatrix::symmetrized(cov_accum);
    return out;
}

/// The self-consistent mean-field Gaussian flow: C(t) = Sigma(t), so Sigma
/// follows the closed covariance form and the mean rides the propagator of
/// its own covariance trajectory.
inline GaussianState propagate_mean_field(const Dynamics& dyn, const GaussianState& init, double t,
                                          double h = 0.0) {
    if (init.mean.size() != dyn.dim() || init.cov.dim() != dyn.dim())
        throw ValidationError("propagate_mean_field: state dimension differs from problem");
    if (!(check_spd(init.cov).min_eigenvalue > 0.0))
        throw ValidationError("propagate_mean_field: initial covariance must be SPD");
    if (t < 0.0) throw ValidationError("propagate_mean_field: t must be >= 0");
    if (h <= 0.0) h = default_moment_step(dyn, init.cov);

    GaussianState out;
    out.cov = covariance_closed_form(dyn, init.cov, t);
    const Vector& u0 = dyn.posterior.minimizer;
    if (t == 0.0) {
        out.mean = init.mean;
        return out;
    }
    const Matrix u_t = propagator_checkpoints(dyn, init.cov, {t}, h).front();
    out.mean = vec_add(u0, u_t * vec_sub(init.mean, u0));
    return out;
}

/// The invariant Gaussian N(u0, sigma B); only exists for sigma > 0 (the
/// sigma = 0 flow concentrates at a Dirac instead).
inline GaussianState equilibrium(const Dynamics& dyn) {
    if (!(dyn.sigma > 0.0))
        throw ValidationError("equilibrium: no Gaussian equilibrium for sigma = 0");
    GaussianState g;
    g.mean = dyn.posterior.minimizer;
    g.cov = dyn.posterior.b * dyn.sigma;
    return g;
}

}  // namespace mflab
