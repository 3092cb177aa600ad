#pragma once

#include <cstddef>
#include <utility>

#include "mflab/symmetric.hpp"

namespace mflab {

/// Linear-Gaussian inverse problem: observe y = G u + noise, noise ~ N(0, Gamma),
/// prior N(0, Gamma0). The forward model is a matrix by construction.
struct ProblemSpec {
    Matrix forward;     // G, K x d
    SymMatrix noise_cov;   // Gamma, K x K, SPD
    SymMatrix prior_cov;   // Gamma0, d x d, SPD
    Vector observation;    // y, K

    std::size_t state_dim() const { return forward.cols(); }
    std::size_t obs_dim() const { return forward.rows(); }
};

/// Posterior quantities of the regularized least-squares functional:
/// precision Binv = Gamma0^-1 + G^T Gamma^-1 G, covariance factor B, and the
/// unique minimizer u0 = B G^T Gamma^-1 y.
struct Posterior {
    SymMatrix precision;   // B^-1
    SymMatrix b;           // B
    Vector minimizer;      // u0
};

inline void validate_problem(const ProblemSpec& p) {
    const std::size_t d = p.state_dim();
    const std::size_t k = p.obs_dim();
    if (d == 0 || k == 0) throw ValidationError("problem: empty forward map");
    if (p.noise_cov.dim() != k) throw ValidationError("problem: Gamma must be K x K");
    if (p.prior_cov.dim() != d) throw ValidationError("problem: Gamma0 must be d x d");
    if (p.observation.size() != k) throw ValidationError("problem: y must have K entries");
    if (!(check_spd(p.noise_cov).min_eigenvalue > 0.0))
        throw ValidationError("problem: Gamma is not symmetric positive definite");
    if (!(check_spd(p.prior_cov).min_eigenvalue > 0.0))
        throw ValidationError("problem: Gamma0 is not symmetric positive definite");
}

inline Posterior build_posterior(const ProblemSpec& p) {
    validate_problem(p);
    const SymMatrix gamma_inv = sym_inv(p.noise_cov);
    const SymMatrix gamma0_inv = sym_inv(p.prior_cov);
    const Matrix gt_gi = p.forward.transposed() * gamma_inv.mat();

    Posterior post;
    post.precision = SymMatrix::symmetrized(gamma0_inv.mat() + gt_gi * p.forward);
    post.b = sym_inv(post.precision);   // throws NumericalError if singular
    post.minimizer = post.b.mat() * (gt_gi * p.observation);
    return post;
}

/// Problem plus posterior plus the diffusion strength sigma of the mean-field
/// dynamics. Everything downstream (moment ODEs, flows, samplers) reads from
/// here. Immutable after construction.
struct Dynamics {
    ProblemSpec problem;
    Posterior posterior;
    double sigma = 0.0;

    // cached inverses used by the misfit formulas
    SymMatrix noise_precision;    // Gamma^-1
    SymMatrix prior_precision;    // Gamma0^-1

    std::size_t dim() const { return problem.state_dim(); }
};

inline Dynamics make_dynamics(ProblemSpec p, double sigma) {
    if (sigma < 0.0) throw ValidationError("dynamics: sigma must be >= 0");
    Dynamics dyn;
    dyn.posterior = build_posterior(p);
    dyn.noise_precision = sym_inv(p.noise_cov);
    dyn.prior_precision = sym_inv(p.prior_cov);
    dyn.problem = std::move(p);
    dyn.sigma = sigma;
    return dyn;
}

/// Phi_R(u; y) = 1/2 |y - G u|^2_Gamma + 1/2 |u|^2_Gamma0.
inline double misfit(const Dynamics& dyn, const Vector& u) {
    if (u.size() != dyn.dim()) throw ValidationError("misfit: u has wrong dimension");
    const Vector residual = vec_sub(dyn.problem.observation, dyn.problem.forward * u);
    return 0.5 * quadratic_form(dyn.noise_precision, residual) +
           0.5 * quadratic_form(dyn.prior_precision, u);
}

/// grad Phi_R(u) = G^T Gamma^-1 (G u - y) + Gamma0^-1 u  ==  B^-1 (u - u0).
inline Vector grad_misfit(const Dynamics& dyn, const Vector& u) {
    if (u.size() != dyn.dim()) throw ValidationError("grad_misfit: u has wrong dimension");
    const Vector residual = vec_sub(dyn.problem.forward * u, dyn.problem.observation);
    Vector g = dyn.problem.forward.transposed() * (dyn.noise_precision * residual);
    const Vector prior_term = dyn.prior_precision * u;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += prior_term[i];
    return g;
}

}  // namespace mflab
