#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mflab/gaussian.hpp"
#include "mflab/random.hpp"

namespace mflab {

/// J interacting particles in R^d; row j of `u` is particle j.
struct Ensemble {
    double t = 0.0;
    Matrix u;  // J x d

    std::size_t count() const { return u.rows(); }
    std::size_t dim() const { return u.cols(); }
};

/// Sample moments with 1/J normalization, plus the forward-mapped blocks.
struct EmpiricalStats {
    Vector u_bar;          // mean in state space
    Vector g_bar;          // mean of G u
    SymMatrix cov_uu;      // d x d
    Matrix cov_ug;         // d x K   (C^{up})
    SymMatrix cov_gg;      // K x K   (C^{pp})

    double spread() const { return cov_uu.trace(); }
};

inline Ensemble make_ensemble(Matrix particles, double t = 0.0) {
    if (particles.rows() < 2) throw ValidationError("ensemble: need at least 2 particles");
    if (particles.cols() == 0) throw ValidationError("ensemble: empty state dimension");
    Ensemble e;
    e.t = t;
    e.u = std::move(particles);
    return e;
}

/// Draw J particles from a Gaussian via mean + cov^{1/2} xi.
inline Ensemble sample_ensemble(std::size_t count, const GaussianState& law, NoiseStream& rng,
                                double t0 = 0.0) {
    validate_gaussian(law, "sample_ensemble");
    if (count < 2) throw ValidationError("sample_ensemble: need at least 2 particles");
    const std::size_t d = law.dim();
    const SymMatrix root = sym_sqrt(law.cov);
    Matrix u(count, d);
    for (std::size_t j = 0; j < count; ++j) {
        const Vector xi = rng.normal_vector(d);
        const Vector dev = root * xi;
        for (std::size_t k = 0; k < d; ++k) u(j, k) = law.mean[k] + dev[k];
    }
    return make_ensemble(std::move(u), t0);
}

inline EmpiricalStats empirical_stats(const Ensemble& e, const ProblemSpec& p) {
    if (e.dim() != p.state_dim()) throw ValidationError("empirical_stats: dimension mismatch");
    const std::size_t count = e.count();
    const std::size_t d = e.dim();
    const std::size_t k = p.obs_dim();
    const double w = 1.0 / static_cast<double>(count);

    EmpiricalStats s;
    s.u_bar.assign(d, 0.0);
    s.g_bar.assign(k, 0.0);
    Matrix g_vals(count, k);
    for (std::size_t j = 0; j < count; ++j) {
        const Vector uj = e.u.row(j);
        const Vector gj = p.forward * uj;
        g_vals.set_row(j, gj);
        vec_axpy(s.u_bar, w, uj);
        vec_axpy(s.g_bar, w, gj);
    }
    Matrix cuu(d, d), cug(d, k), cgg(k, k);
    for (std::size_t j = 0; j < count; ++j) {
        const Vector du = vec_sub(e.u.row(j), s.u_bar);
        const Vector dg = vec_sub(g_vals.row(j), s.g_bar);
        add_outer(cuu, w, du, du);
        add_outer(cug, w, du, dg);
        add_outer(cgg, w, dg, dg);
    }
    s.cov_uu = SymMatrix::symmetrized(cuu);
    s.cov_ug = std::move(cug);
    s.cov_gg = SymMatrix::symmetrized(cgg);
    return s;
}

namespace detail {

/// Explicit Euler-Maruyama steppers are only stable while h ||B^-1|| ||C|| is
/// small; refuse to take steps past 0.5 rather than produce garbage. Plays the
/// role the taming factor plays in the discrete iteration.
inline void guard_step_size(double h, double hessian_norm, double cov_norm, const char* who) {
    if (h * hessian_norm * cov_norm > 0.5 * (1.0 + 1e-12))
        throw NumericalError(std::string(who) + ": step size violates h <= 0.5/(||B^-1|| ||C||); h=" +
                             std::to_string(h));
}

}  // namespace detail

/// One synchronous particle update of the discrete (tamed) iteration
///   u_j <- u_j + h C^{up} (h C^{pp} + Gamma)^{-1} (y + eta_j - G u_j),
/// eta_j ~ N(0, h^{-1} noise_cov). Stats are frozen at step start. Passing
/// rng = nullptr or a zero noise_cov suppresses the perturbation.
inline Ensemble eki_step(const Ensemble& e, const ProblemSpec& p, double h,
                         const SymMatrix& noise_cov, NoiseStream* rng) {
    if (h <= 0.0) throw ValidationError("eki_step: h must be positive");
    if (e.dim() != p.state_dim()) throw ValidationError("eki_step: dimension mismatch");
    const std::size_t k = p.obs_dim();
    if (noise_cov.dim() != 0 && noise_cov.dim() != k)
        throw ValidationError("eki_step: noise covariance must be K x K");

    const EmpiricalStats stats = empirical_stats(e, p);
    SymMatrix denom = p.noise_cov;
    denom += stats.cov_gg * h;
    // LU rather than Cholesky: no square roots, so simple rational instances
    // (e.g. a 1x1 system with denominator 2) solve exactly.
    const LuFactors denom_lu = lu_factor(denom.mat());

    const bool with_noise = rng != nullptr && noise_cov.dim() == k &&
                            frobenius_norm(noise_cov) > 0.0;
    SymMatrix noise_root;
    if (with_noise) noise_root = sym_sqrt(noise_cov);
    const double noise_scale = 1.0 / std::sqrt(h);

    Ensemble out;
    out.t = e.t + h;
    out.u = Matrix(e.count(), e.dim());
    for (std::size_t j = 0; j < e.count(); ++j) {
        const Vector uj = e.u.row(j);
        Vector innovation = vec_sub(p.observation, p.forward * uj);
        if (with_noise) {
            const Vector eta = noise_root * rng->normal_vector(k);
            vec_axpy(innovation, noise_scale, eta);
        }
        const Vector w = lu_solve(denom_lu, innovation);
        Vector next = uj;
        vec_axpy(next, h, stats.cov_ug * w);
        out.u.set_row(j, next);
    }
    return out;
}

/// Euler-Maruyama step of the continuous-time inversion dynamics
///   du_j = C^{up} Gamma^-1 (y - G u_j) dt + C^{up} Gamma^-1 sqrt(noise_cov) dW_j.
/// The noise enters inside the Gamma-weighted bracket, per-particle.
inline Ensemble eki_sde_step(const Ensemble& e, const ProblemSpec& p, double h,
                             const SymMatrix& noise_cov, NoiseStream* rng) {
    if (h <= 0.0) throw ValidationError("eki_sde_step: h must be positive");
    if (e.dim() != p.state_dim()) throw ValidationError("eki_sde_step: dimension mismatch");
    const std::size_t k = p.obs_dim();
    if (noise_cov.dim() != 0 && noise_cov.dim() != k)
        throw ValidationError("eki_sde_step: noise covariance must be K x K");

    const EmpiricalStats stats = empirical_stats(e, p);
    const SymMatrix gamma_inv = sym_inv(p.noise_cov);
    // effective drift Hessian in state space is G^T Gamma^-1 G
    const SymMatrix hess =
        SymMatrix::symmetrized(p.forward.transposed() * gamma_inv.mat() * p.forward);
    detail::guard_step_size(h, op_norm2(hess), op_norm2(stats.cov_uu), "eki_sde_step");

    const bool with_noise = rng != nullptr && noise_cov.dim() == k &&
                            frobenius_norm(noise_cov) > 0.0;
    SymMatrix noise_root;
    if (with_noise) noise_root = sym_sqrt(noise_cov);
    const double sqrt_h = std::sqrt(h);

    Ensemble out;
    out.t = e.t + h;
    out.u = Matrix(e.count(), e.dim());
    for (std::size_t j = 0; j < e.count(); ++j) {
        const Vector uj = e.u.row(j);
        Vector bracket = vec_scale(vec_sub(p.observation, p.forward * uj), h);
        if (with_noise) {
            const Vector dw = noise_root * rng->normal_vector(k);
            vec_axpy(bracket, sqrt_h, dw);
        }
        Vector next = uj;
        vec_axpy(next, 1.0, stats.cov_ug * (gamma_inv * bracket));
        out.u.set_row(j, next);
    }
    return out;
}

/// Euler-Maruyama step of the sampler dynamics
///   u_j <- u_j - h C^{uu} grad PhiR(u_j) + sqrt(2 sigma h) (C^{uu})^{1/2} xi_j.
/// The drift is also evaluated in its interacting-particle form
/// C^{up} Gamma^-1 (y - G u_j) - C^{uu} Gamma0^-1 u_j and both forms must
/// agree (they are algebraically identical for a linear forward model).
/// rng = nullptr suppresses the noise term (deterministic test mode).
inline Ensemble eks_step(const Ensemble& e, const Dynamics& dyn, double h, NoiseStream* rng) {
    if (h <= 0.0) throw ValidationError("eks_step: h must be positive");
    if (e.dim() != dyn.dim()) throw ValidationError("eks_step: dimension mismatch");

    const EmpiricalStats stats = empirical_stats(e, dyn.problem);
    detail::guard_step_size(h, op_norm2(dyn.posterior.precision), op_norm2(stats.cov_uu),
                            "eks_step");

    const bool with_noise = rng != nullptr && dyn.sigma > 0.0;
    SymMatrix cov_root;
    if (with_noise) cov_root = sym_sqrt(stats.cov_uu);
    const double amp = with_noise ? std::sqrt(2.0 * dyn.sigma * h) : 0.0;

    const double drift_tol = 1e-10;
    Ensemble out;
    out.t = e.t + h;
    out.u = Matrix(e.count(), e.dim());
    for (std::size_t j = 0; j < e.count(); ++j) {
        const Vector uj = e.u.row(j);
        Vector drift = stats.cov_uu * grad_misfit(dyn, uj);
        for (double& v : drift) v = -v;

        // cross-check against the pre-gradient form of the dynamics
        Vector alt = stats.cov_ug * (dyn.noise_precision *
                                     vec_sub(dyn.problem.observation, dyn.problem.forward * uj));
        const Vector prior_pull = stats.cov_uu * (dyn.prior_precision * uj);
        for (std::size_t i = 0; i < alt.size(); ++i) alt[i] -= prior_pull[i];
        double gap = 0.0, scale = 1.0;
        for (std::size_t i = 0; i < alt.size(); ++i) {
            gap = std::max(gap, std::fabs(alt[i] - drift[i]));
            scale = std::max(scale, std::fabs(drift[i]));
        }
        if (gap > drift_tol * scale)
            throw InvariantViolation("eks_step: gradient-form and particle-form drifts disagree");

        Vector next = uj;
        vec_axpy(next, h, drift);
        if (with_noise) {
            const Vector xi = rng->normal_vector(e.dim());
            vec_axpy(next, amp, cov_root * xi);
        }
        out.u.set_row(j, next);
    }
    return out;
}

/// Two ensembles driven by one Wiener process under the linear Fokker-Planck
/// SDE with prescribed covariance C(t). The per-particle difference is
/// authoritative state, advanced by the exact deterministic recursion
///   diff <- diff (I - h C(t) B^-1)^T,
/// which the shared noise makes exact; the second ensemble is materialized as
/// x - diff. Seed and u0 never enter the recursion.
struct CoupledEnsembles {
    Ensemble x;
    Ensemble y;
    Matrix diff;  // J x d, rows are x_j - y_j

    static CoupledEnsembles couple(Ensemble first, Ensemble second) {
        if (first.count() != second.count() || first.dim() != second.dim())
            throw ValidationError("couple: ensembles must have matching shapes");
        if (first.t != second.t) throw ValidationError("couple: ensembles must share a start time");
        CoupledEnsembles c;
        c.diff = first.u - second.u;
        c.x = std::move(first);
        c.y = std::move(second);
        return c;
    }
};

inline void coupled_linear_fp_step(CoupledEnsembles& pair, const Dynamics& dyn,
                                   const std::function<SymMatrix(double)>& cov_at, double h,
                                   NoiseStream& rng) {
    if (h <= 0.0) throw ValidationError("coupled_linear_fp_step: h must be positive");
    if (pair.x.dim() != dyn.dim())
        throw ValidationError("coupled_linear_fp_step: dimension mismatch");

    const std::size_t d = pair.x.dim();
    const SymMatrix cov = cov_at(pair.x.t);
    detail::guard_step_size(h, op_norm2(dyn.posterior.precision), op_norm2(cov),
                            "coupled_linear_fp_step");

    const Matrix step_matrix =
        Matrix::identity(d) - (cov.mat() * dyn.posterior.precision.mat()) * h;
    const bool with_noise = dyn.sigma > 0.0;
    SymMatrix cov_root;
    if (with_noise) cov_root = sym_sqrt(cov);
    const double amp = with_noise ? std::sqrt(2.0 * dyn.sigma * h) : 0.0;

    const Vector& u0 = dyn.posterior.minimizer;
    Matrix next_x(pair.x.count(), d);
    for (std::size_t j = 0; j < pair.x.count(); ++j) {
        const Vector xj = pair.x.u.row(j);
        Vector next = vec_add(u0, step_matrix * vec_sub(xj, u0));
        if (with_noise) {
            const Vector xi = rng.normal_vector(d);
            vec_axpy(next, amp, cov_root * xi);
        }
        next_x.set_row(j, next);
    }

    pair.diff = pair.diff * step_matrix.transposed();
    pair.x.u = std::move(next_x);
    pair.x.t += h;
    pair.y.u = pair.x.u - pair.diff;
    pair.y.t = pair.x.t;
}

// ---- trajectory driver ---------------------------------------------------------

enum class Scheme { eki, eki_sde, eks, coupled };

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "eki") return Scheme::eki;
    if (s == "eki_sde") return Scheme::eki_sde;
    if (s == "eks") return Scheme::eks;
    if (s == "coupled") return Scheme::coupled;
    throw ValidationError("unknown scheme '" + s + "' (expect eki | eki_sde | eks | coupled)");
}

struct SimOptions {
    Scheme scheme = Scheme::eks;
    double h = 1e-3;
    double t_end = 1.0;
    std::size_t record_every = 1;
    SymMatrix noise_cov;        // EKI perturbation covariance; empty or zero = off
    SymMatrix coupled_cov0;     // C(0) of the prescribed flow for the coupled scheme
};

struct TrajectoryRecord {
    double t = 0.0;
    EmpiricalStats stats;
};

/// Run a particle scheme to t_end, recording stats at step 0, every
/// record_every-th step, and the final step. Deterministic given
/// (seed, scheme, h). The coupled scheme needs a second initial ensemble and
/// records the stats of the first one.
inline std::vector<TrajectoryRecord> run_simulation(Ensemble init, const Dynamics& dyn,
                                                    const SimOptions& opt, NoiseStream& rng,
                                                    const std::optional<Ensemble>& init2 = {}) {
    if (opt.h <= 0.0) throw ValidationError("run_simulation: h must be positive");
    if (opt.t_end < init.t) throw ValidationError("run_simulation: t_end before start time");
    if (opt.record_every == 0) throw ValidationError("run_simulation: record_every must be >= 1");

    const double span = opt.t_end - init.t;
    std::size_t steps = static_cast<std::size_t>(std::llround(span / opt.h));
    if (std::fabs(static_cast<double>(steps) * opt.h - span) > 1e-9 * std::max(1.0, span) ||
        steps == 0)
        steps = static_cast<std::size_t>(std::ceil(span / opt.h - 1e-12));

    std::optional<CoupledEnsembles> coupled;
    std::function<SymMatrix(double)> cov_at;
    if (opt.scheme == Scheme::coupled) {
        if (!init2) throw ValidationError("run_simulation: coupled scheme needs a second ensemble");
        const SymMatrix c0 = opt.coupled_cov0.dim() ? opt.coupled_cov0
                                                    : empirical_stats(init, dyn.problem).cov_uu;
        cov_at = [&dyn, c0](double t) { return covariance_closed_form(dyn, c0, t); };
        coupled = CoupledEnsembles::couple(std::move(init), *init2);
    }

    std::vector<TrajectoryRecord> records;
    const Ensemble* current = coupled ? &coupled->x : &init;
    records.push_back({current->t, empirical_stats(*current, dyn.problem)});

    for (std::size_t k = 0; k < steps; ++k) {
        const double h = std::min(opt.h, opt.t_end - current->t);
        if (h <= 0.0) break;
        switch (opt.scheme) {
            case Scheme::eki:
                init = eki_step(init, dyn.problem, h, opt.noise_cov, &rng);
                break;
            case Scheme::eki_sde:
                init = eki_sde_step(init, dyn.problem, h, opt.noise_cov, &rng);
                break;
            case Scheme::eks:
                init = eks_step(init, dyn, h, &rng);
                break;
            case Scheme::coupled:
                coupled_linear_fp_step(*coupled, dyn, cov_at, h, rng);
                break;
        }
        current = coupled ? &coupled->x : &init;
        if ((k + 1) % opt.record_every == 0 || k + 1 == steps)
            records.push_back({current->t, empirical_stats(*current, dyn.problem)});
    }
    return records;
}

}  // namespace mflab
