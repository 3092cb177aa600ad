#include <catch2/catch_amalgamated.hpp>

#include "mflab/moments.hpp"
#include "test_helpers.hpp"

using namespace mflab;

namespace {

Dynamics scalar_instance(double sigma) {
    ProblemSpec p;
    p.forward = Matrix(1, 1);
    p.forward(0, 0) = 2.0;
    p.noise_cov = SymMatrix::identity(1);
    p.prior_cov = SymMatrix::identity(1);
    p.observation = {3.0};
    return make_dynamics(p, sigma);  // Binv = 5, B = 0.2, u0 = 1.2
}

double conjugation_residual(const Dynamics& dyn, const SymMatrix& c0, double s, double t,
                            double h) {
    const Matrix u = propagator(dyn, c0, s, t, h).u;
    const SymMatrix ct_inv = sym_inv(covariance_closed_form(dyn, c0, t));
    const SymMatrix cs_inv = s == 0.0 ? sym_inv(c0) : sym_inv(covariance_closed_form(dyn, c0, s));
    const Matrix lhs = u.transposed() * ct_inv.mat() * u;
    const Matrix rhs = cs_inv.mat() * std::exp(-2.0 * dyn.sigma * (t - s));
    return frobenius_norm(lhs - rhs) / frobenius_norm(cs_inv);
}

}  // namespace

TEST_CASE("envelope_alpha: pinned values and sigma-continuity") {
    REQUIRE(envelope_alpha(0.0, 2.0) == 5.0);
    REQUIRE(envelope_alpha(0.0, 0.0) == 1.0);
    REQUIRE(envelope_alpha(1.7, 0.0) == 1.0);
    REQUIRE(std::fabs(envelope_alpha(1.0, 50.0) - 1.0) <= 1e-20);
    // continuous at sigma -> 0
    REQUIRE(envelope_alpha(1e-9, 2.0) == Catch::Approx(5.0).margin(1e-7));
}

TEST_CASE("covariance_closed_form: fixed point, scalar value, t=0") {
    const Dynamics dyn = scalar_instance(0.7);
    const SymMatrix eq = dyn.posterior.b * dyn.sigma;
    for (double t : {0.1, 1.0, 7.5}) {
        const SymMatrix c = covariance_closed_form(dyn, eq, t);
        REQUIRE(frobenius_norm(c.mat() - eq.mat()) <= 1e-14);
    }

    const Dynamics flow = scalar_instance(0.0);
    const SymMatrix c1 = covariance_closed_form(flow, SymMatrix::identity(1), 1.0);
    REQUIRE(c1(0, 0) == Catch::Approx(1.0 / 11.0).margin(1e-15));

    std::mt19937_64 rng(2);
    const SymMatrix c0 = testutil::random_spd(rng, 3);
    const Dynamics d3 = testutil::random_dynamics(rng, 3, 2, 1.3);
    REQUIRE(frobenius_norm(covariance_closed_form(d3, c0, 0.0).mat() - c0.mat()) <= 1e-12);

    REQUIRE_THROWS_AS(covariance_closed_form(d3, SymMatrix::diagonal({1.0, -1.0, 1.0}), 1.0),
                      ValidationError);
}

TEST_CASE("moment_rhs: equilibrium, scalar hand case, Dirac stationarity") {
    const Dynamics dyn = scalar_instance(0.9);
    MomentState eq;
    eq.delta = {0.0};
    eq.cov = dyn.posterior.b * dyn.sigma;
    const MomentRhs at_eq = moment_rhs(dyn, eq);
    REQUIRE(std::fabs(at_eq.ddelta[0]) <= 1e-15);
    REQUIRE(frobenius_norm(at_eq.dcov) <= 1e-15);

    const Dynamics flow = scalar_instance(0.0);
    MomentState st;
    st.delta = {1.0};
    st.cov = SymMatrix::identity(1);
    const MomentRhs rhs = moment_rhs(flow, st);
    REQUIRE(rhs.ddelta[0] == Catch::Approx(-5.0).margin(1e-14));
    REQUIRE(rhs.dcov(0, 0) == Catch::Approx(-10.0).margin(1e-14));

    MomentState dirac;
    dirac.delta = {0.3};
    dirac.cov = SymMatrix(1);  // zero covariance
    const MomentRhs frozen = moment_rhs(flow, dirac);
    REQUIRE(frozen.ddelta[0] == 0.0);
    REQUIRE(frobenius_norm(frozen.dcov) == 0.0);
}

TEST_CASE("integrate_moments: scalar closed-form oracle at h=1e-3") {
    const Dynamics dyn = scalar_instance(0.0);
    MomentState init;
    init.delta = {1.0};
    init.cov = SymMatrix::identity(1);
    const MomentState out = integrate_moments(dyn, init, 1.0, 1e-3);
    REQUIRE(std::fabs(out.cov(0, 0) - 1.0 / 11.0) <= 1e-10);
}

TEST_CASE("integrate_moments: equilibrium initial data stays put") {
    const Dynamics dyn = scalar_instance(1.4);
    MomentState init;
    init.delta = {0.0};
    init.cov = dyn.posterior.b * dyn.sigma;
    const MomentState out = integrate_moments(dyn, init, 3.0, 1e-3);
    REQUIRE(std::fabs(out.delta[0]) <= 1e-12);
    REQUIRE(frobenius_norm(out.cov.mat() - init.cov.mat()) <= 1e-12);
}

TEST_CASE("integrate_moments: random d=3 instance matches the closed form") {
    std::mt19937_64 rng(14);
    for (double sigma : {0.0, 1.0}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, sigma);
        MomentState init;
        init.delta = testutil::random_vector(rng, 3);
        init.cov = testutil::random_spd(rng, 3);
        const MomentState out = integrate_moments(dyn, init, 2.0, 1e-3);
        const SymMatrix exact = covariance_closed_form(dyn, init.cov, 2.0);
        REQUIRE(frobenius_norm(out.cov.mat() - exact.mat()) <= 1e-8);
    }
}

TEST_CASE("integrate_moments: rejects non-positive h and backwards time") {
    const Dynamics dyn = scalar_instance(0.0);
    MomentState init;
    init.delta = {0.0};
    init.cov = SymMatrix::identity(1);
    REQUIRE_THROWS_AS(integrate_moments(dyn, init, 1.0, 0.0), ValidationError);
    init.t = 2.0;
    REQUIRE_THROWS_AS(integrate_moments(dyn, init, 1.0, 1e-3), ValidationError);
}

TEST_CASE("integrate_moments: a wildly large step trips the PSD guard") {
    const Dynamics dyn = scalar_instance(0.0);
    MomentState init;
    init.delta = {0.0};
    init.cov = SymMatrix::identity(1) * 50.0;
    // h ||C B^-1|| >> 1 drives the explicit step negative
    REQUIRE_THROWS_AS(integrate_moments(dyn, init, 1.0, 0.5), NumericalError);
}

TEST_CASE("propagator: s=t identity and scalar equilibrium decay") {
    const Dynamics dyn = scalar_instance(1.0);
    const SymMatrix eq = dyn.posterior.b * dyn.sigma;
    const Propagator at_s = propagator(dyn, eq, 0.7, 0.7, 1e-3);
    REQUIRE(at_s.u.same_bits(Matrix::identity(1)));

    // C = sigma B identically, so dU/dt = -sigma U and U(0,t) = e^{-sigma t}
    for (double t : {0.5, 1.0, 2.0}) {
        const Propagator p = propagator(dyn, eq, 0.0, t, 1e-3);
        REQUIRE(p.u(0, 0) == Catch::Approx(std::exp(-dyn.sigma * t)).epsilon(1e-10));
    }
}

TEST_CASE("propagator: conjugation identity on random instances") {
    std::mt19937_64 rng(21);
    for (double sigma : {0.0, 0.5, 2.0}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 2, sigma);
        const SymMatrix c0 = testutil::random_spd(rng, 3);
        REQUIRE(conjugation_residual(dyn, c0, 0.0, 1.5, 1e-3) <= 1e-6);
        REQUIRE(conjugation_residual(dyn, c0, 0.5, 2.0, 1e-3) <= 1e-6);
    }
}

TEST_CASE("propagator: composition matches direct integration") {
    std::mt19937_64 rng(33);
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.8);
    const SymMatrix c0 = testutil::random_spd(rng, 2);
    const Matrix u_02 = propagator(dyn, c0, 0.0, 2.0, 1e-3).u;
    const Matrix u_01 = propagator(dyn, c0, 0.0, 1.0, 1e-3).u;
    const Matrix u_12 = propagator(dyn, c0, 1.0, 2.0, 1e-3).u;
    REQUIRE(frobenius_norm(u_12 * u_01 - u_02) <= 1e-9);
}

TEST_CASE("propagator_norm_bound: structure and 200-instance property") {
    std::mt19937_64 rng(45);
    {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.0);
        const SymMatrix b = dyn.posterior.b;
        const double big = op_norm2(b);
        const double small = op_norm2(dyn.posterior.precision);
        const double bound = propagator_norm_bound(dyn, b, 0.0, 3.0);
        REQUIRE(bound == Catch::Approx(std::sqrt(small * big / envelope_alpha(0.0, 3.0)))
                             .epsilon(1e-12));
        // s = t: bound >= 1 since m M >= 1, consistent with U = I
        REQUIRE(propagator_norm_bound(dyn, b, 1.0, 1.0) >= 1.0 - 1e-12);
    }
    std::uniform_real_distribution<double> pick_t(0.1, 3.0);
    std::uniform_real_distribution<double> pick_sigma(0.0, 2.0);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d = 2 + trial % 3;
        const Dynamics dyn = testutil::random_dynamics(rng, d, d, pick_sigma(rng));
        const SymMatrix c0 = testutil::random_spd(rng, d);
        double s = pick_t(rng), t = pick_t(rng);
        if (s > t) std::swap(s, t);
        const Propagator p = propagator(dyn, c0, s, t, 1e-3);
        REQUIRE(op_norm2(p.u) <= propagator_norm_bound(dyn, c0, s, t) * (1.0 + 1e-9));
    }
}

TEST_CASE("bound_constants: validation") {
    BoundConstants bad{0.5, 0.5, 1.0};  // m M < 1
    REQUIRE_THROWS_AS(bad.validate(), ValidationError);
    BoundConstants ok{2.0, 1.0, 1.0};
    REQUIRE_NOTHROW(ok.validate());
}

TEST_CASE("moment_gap_bounds: trivial cases") {
    std::mt19937_64 rng(50);
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 1.0);
    MomentState a;
    a.delta = {1.0, -0.5};
    a.cov = testutil::random_spd(rng, 2);
    const BoundConstants consts = bound_constants(dyn, a, a);

    const MomentGapBounds same = moment_gap_bounds(dyn, a, a, consts, 2.0);
    REQUIRE(same.cov_bound == 0.0);
    REQUIRE(same.mean_bound == 0.0);

    MomentState b = a;
    b.delta = {0.2, 0.4};
    const BoundConstants c2 = bound_constants(dyn, a, b);
    const MomentGapBounds at0 = moment_gap_bounds(dyn, a, b, c2, 0.0);
    const double expected = std::sqrt(c2.small * c2.big) * norm2(vec_sub(a.delta, b.delta));
    REQUIRE(at0.mean_bound == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("moment_gap_bounds: evolved moments respect the envelopes") {
    std::mt19937_64 rng(60);
    const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, 1.0);
    MomentState a, b;
    a.delta = testutil::random_vector(rng, 3);
    a.cov = testutil::random_spd(rng, 3);
    b.delta = testutil::random_vector(rng, 3);
    b.cov = testutil::random_spd(rng, 3);
    const BoundConstants consts = bound_constants(dyn, a, b);

    for (double t : {0.5, 1.0, 2.0, 4.0}) {
        const SymMatrix c1 = covariance_closed_form(dyn, a.cov, t);
        const SymMatrix c2 = covariance_closed_form(dyn, b.cov, t);
        const MomentState ea = integrate_moments(dyn, a, t, 1e-3);
        const MomentState eb = integrate_moments(dyn, b, t, 1e-3);
        const MomentGapBounds g = moment_gap_bounds(dyn, a, b, consts, t);
        REQUIRE(frobenius_norm(c1.mat() - c2.mat()) <= g.cov_bound * (1.0 + 1e-9));
        REQUIRE(norm2(vec_sub(ea.delta, eb.delta)) <= g.mean_bound * (1.0 + 1e-6) + 1e-12);
    }
}

TEST_CASE("propagator_gap_bound: identical covariances give coinciding propagators") {
    std::mt19937_64 rng(70);
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.6);
    MomentState a;
    a.delta = {1.0, 0.0};
    a.cov = testutil::random_spd(rng, 2);
    const BoundConstants consts = bound_constants(dyn, a, a);
    REQUIRE(propagator_gap_bound(dyn, consts, a.cov, a.cov, 0.0, 2.0) == 0.0);

    // s=0 substitution form
    MomentState b = a;
    b.cov = testutil::random_spd(rng, 2);
    const BoundConstants cb = bound_constants(dyn, a, b);
    const double direct = propagator_gap_bound(dyn, cb, a.cov, b.cov, 0.0, 1.5);
    const double expected = std::pow(cb.small, 4) * std::pow(cb.big, 3) *
                            frobenius_norm(b.cov.mat() - a.cov.mat()) *
                            std::exp(-dyn.sigma * 1.5) /
                            std::sqrt(envelope_alpha(dyn.sigma, 1.5));
    REQUIRE(direct == Catch::Approx(expected).epsilon(1e-12));
}

TEST_CASE("propagator_gap_bound: measured gap stays under the envelope") {
    std::mt19937_64 rng(80);
    for (double sigma : {0.0, 1.0}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 3, sigma);
        MomentState a, b;
        a.delta = {1.0, 0.0};
        b.delta = {1.0, 0.0};
        a.cov = testutil::random_spd(rng, 2);
        b.cov = testutil::random_spd(rng, 2);
        const BoundConstants consts = bound_constants(dyn, a, b);
        for (double t : {0.5, 1.0, 2.0}) {
            const Matrix u1 = propagator(dyn, a.cov, 0.0, t, 1e-3).u;
            const Matrix u2 = propagator(dyn, b.cov, 0.0, t, 1e-3).u;
            REQUIRE(op_norm2(u2 - u1) <=
                    propagator_gap_bound(dyn, consts, a.cov, b.cov, 0.0, t) * (1.0 + 1e-6) + 1e-12);
        }
    }
}

TEST_CASE("invariant: Mahalanobis norm of the mean decays exactly at rate sigma") {
    std::mt19937_64 rng(90);
    for (double sigma : {0.0, 0.5, 1.5}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 2, sigma);
        MomentState init;
        init.delta = testutil::random_vector(rng, 3);
        init.cov = testutil::random_spd(rng, 3);
        const double t = 1.7;
        const MomentState out = integrate_moments(dyn, init, t, 1e-3);
        const double lhs = std::sqrt(quadratic_form(sym_inv(out.cov), out.delta));
        const double rhs =
            std::exp(-sigma * t) * std::sqrt(quadratic_form(sym_inv(init.cov), init.delta));
        REQUIRE(lhs == Catch::Approx(rhs).epsilon(1e-6));
    }
}

TEST_CASE("invariant: convex-combination form of the closed covariance") {
    std::mt19937_64 rng(95);
    for (double sigma : {0.0, 0.4, 1.0, 2.5}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, sigma);
        const SymMatrix c0 = testutil::random_spd(rng, 3);
        const SymMatrix c0_inv = sym_inv(c0);
        for (double t : {0.3, 1.0, 4.0}) {
            const double alpha = envelope_alpha(sigma, t);
            const double beta = std::exp(-2.0 * sigma * t) / alpha;
            const SymMatrix ct = covariance_closed_form(dyn, c0, t);
            const SymMatrix lhs = sym_inv(ct * alpha);
            const SymMatrix rhs = dyn.posterior.precision * (1.0 - beta) + c0_inv * beta;
            REQUIRE(frobenius_norm(lhs.mat() - rhs.mat()) <= 1e-10 * frobenius_norm(rhs));
        }
    }
}

TEST_CASE("invariant: equilibrium approach for sigma > 0") {
    std::mt19937_64 rng(99);
    const double sigma = 1.2;
    const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, sigma);
    const SymMatrix c0 = testutil::random_spd(rng, 3, 0.2, 2.0);
    const SymMatrix eq = dyn.posterior.b * sigma;

    double previous = std::numeric_limits<double>::infinity();
    for (double t : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        const double err = frobenius_norm(covariance_closed_form(dyn, c0, t).mat() - eq.mat());
        REQUIRE(err <= previous);
        previous = err;
    }
    const double terminal =
        frobenius_norm(covariance_closed_form(dyn, c0, 20.0 / sigma).mat() - eq.mat());
    REQUIRE(terminal <= 1e-8 * frobenius_norm(eq));
}

TEST_CASE("invariant: sigma=0 covariance decays like M/alpha(t)") {
    std::mt19937_64 rng(102);
    const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, 0.0);
    const SymMatrix c0 = testutil::random_spd(rng, 3);
    const double big = std::max(op_norm2(c0), op_norm2(dyn.posterior.b));
    for (double t : {1.0, 10.0, 100.0}) {
        REQUIRE(op_norm2(covariance_closed_form(dyn, c0, t)) <=
                big / envelope_alpha(0.0, t) * (1.0 + 1e-9));
    }
}
