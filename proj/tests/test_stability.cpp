#include <catch2/catch_amalgamated.hpp>

#include "mflab/stability.hpp"
#include "test_helpers.hpp"

using namespace mflab;

namespace {

Dynamics diag_instance(double sigma) {
    ProblemSpec p;
    p.forward = Matrix::identity(2);
    p.noise_cov = SymMatrix::identity(2);
    p.prior_cov = SymMatrix::diagonal({2.0, 1.0});
    p.observation = {1.0, -1.0};
    return make_dynamics(p, sigma);
}

std::vector<double> linspace(double a, double b, std::size_t n) {
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return g;
}

std::vector<double> logspace(double a, double b, std::size_t n) {
    std::vector<double> g(n);
    const double la = std::log(a), lb = std::log(b);
    for (std::size_t i = 0; i < n; ++i)
        g[i] = std::exp(la + (lb - la) * static_cast<double>(i) / static_cast<double>(n - 1));
    return g;
}

}  // namespace

TEST_CASE("w2_decay_rate: pinned values across the sigma regimes") {
    REQUIRE(w2_decay_rate(0.0, 0.0) == 1.0);
    REQUIRE(w2_decay_rate(0.0, 4.0) == Catch::Approx(1.0 / 3.0).margin(1e-14));
    // sigma >= 1: e^{-sigma t}/alpha(t); alpha -> 1/2 at sigma = 2
    const double t = 12.0;
    REQUIRE(w2_decay_rate(2.0, t) ==
            Catch::Approx(2.0 * std::exp(-2.0 * t)).epsilon(1e-9));
    // 0 < sigma < 1: exponent 1/2 on alpha
    const double rate = w2_decay_rate(0.5, 3.0);
    REQUIRE(rate == Catch::Approx(std::exp(-1.5) / std::sqrt(envelope_alpha(0.5, 3.0)))
                        .epsilon(1e-12));
}

TEST_CASE("linear_fp_stability: identical states stay identical") {
    std::mt19937_64 rng(3);
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 1.0);
    const SymMatrix c0 = testutil::random_spd(rng, 2);
    GaussianState f{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
    const StabilityReport rep = linear_fp_stability(dyn, c0, f, f, linspace(0.0, 2.0, 5));
    for (double v : rep.w2) REQUIRE(v <= 1e-6);
    for (double r : rep.ratio) REQUIRE(std::isfinite(r));
}

TEST_CASE("linear_fp_stability: equal covariances reduce to the propagated mean gap") {
    std::mt19937_64 rng(7);
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.8);
    const SymMatrix c0 = testutil::random_spd(rng, 2);
    const SymMatrix shared = testutil::random_spd(rng, 2);
    GaussianState f1{{1.0, 0.0}, shared};
    GaussianState f2{{-0.5, 2.0}, shared};
    const std::vector<double> grid = linspace(0.0, 2.0, 5);
    const StabilityReport rep = linear_fp_stability(dyn, c0, f1, f2, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        const Matrix u = propagator(dyn, c0, 0.0, grid[i], 1e-3).u;
        const double expected = norm2(u * vec_sub(f1.mean, f2.mean));
        REQUIRE(rep.w2[i] == Catch::Approx(expected).margin(1e-8));
    }
}

TEST_CASE("linear_fp_stability: the contraction ratio never exceeds one") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.5 * trial);
        const SymMatrix c0 = testutil::random_spd(rng, 2);
        GaussianState f1{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        GaussianState f2{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        const StabilityReport rep =
            linear_fp_stability(dyn, c0, f1, f2, linspace(0.0, 2.0, 9));
        for (double r : rep.ratio) REQUIRE(r <= 1.0 + 1e-8);
    }
}

TEST_CASE("mean_field_stability: equilibrium versus arbitrary state decays to zero") {
    std::mt19937_64 rng(13);
    const Dynamics dyn = diag_instance(1.0);
    GaussianState f1 = equilibrium(dyn);
    GaussianState f2{{2.0, 1.0}, testutil::random_spd(rng, 2)};
    const StabilityReport rep =
        mean_field_stability(dyn, f1, f2, linspace(0.0, 8.0, 17));
    REQUIRE(rep.w2.front() > 0.1);
    REQUIRE(rep.w2.back() <= 1e-3);
    for (std::size_t i = 1; i < rep.w2.size(); ++i) REQUIRE(rep.w2[i] <= rep.w2[i - 1] * (1 + 1e-9));
}

TEST_CASE("mean_field_stability: sigma=1 exponential rate is -1") {
    const Dynamics dyn = diag_instance(1.0);
    GaussianState f1{{2.0, 0.5}, SymMatrix::diagonal({1.0, 0.5})};
    GaussianState f2{{0.5, -0.5}, SymMatrix::diagonal({0.6, 1.1})};
    const StabilityReport rep =
        mean_field_stability(dyn, f1, f2, linspace(2.0, 6.0, 17), 1.0);
    REQUIRE(rep.fitted_rate == Catch::Approx(-1.0).margin(0.05));
}

TEST_CASE("mean_field_stability: sigma=0 algebraic rate is -1/2 in log alpha") {
    const Dynamics dyn = diag_instance(0.0);
    GaussianState f1{{2.0, 0.5}, SymMatrix::diagonal({1.0, 0.5})};
    GaussianState f2{{0.5, -0.5}, SymMatrix::diagonal({0.6, 1.1})};
    const StabilityReport rep =
        mean_field_stability(dyn, f1, f2, logspace(10.0, 100.0, 9), 1.0, 1e-3);
    REQUIRE(rep.fitted_rate == Catch::Approx(-0.5).margin(0.05));
}

TEST_CASE("invariant: equilibration at t = 30/sigma for sigma below one") {
    std::mt19937_64 rng(59);
    const double sigma = 0.5;
    const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, sigma);
    GaussianState init{testutil::random_vector(rng, 2, 2.0), testutil::random_spd(rng, 2)};
    const GaussianState ft = propagate_mean_field(dyn, init, 30.0 / sigma);
    REQUIRE(w2_gaussian(ft, equilibrium(dyn)).distance <= 1e-6);
}

TEST_CASE("sharpness_diagnostic: equilibrium start is identically zero and in band") {
    const Dynamics dyn = diag_instance(1.0);
    const GaussianState eq = equilibrium(dyn);
    const SharpnessReport rep = sharpness_diagnostic(dyn, eq, linspace(0.0, 3.0, 7));
    for (double v : rep.scaled_w2) REQUIRE(v <= 1e-9);
    for (double v : rep.lower) REQUIRE(v == 0.0);
}

TEST_CASE("sharpness_diagnostic: scalar instance stays between the envelopes") {
    ProblemSpec p;
    p.forward = Matrix(1, 1);
    p.forward(0, 0) = 2.0;
    p.noise_cov = SymMatrix::identity(1);
    p.prior_cov = SymMatrix::identity(1);
    p.observation = {3.0};
    const Dynamics dyn = make_dynamics(p, 1.0);

    GaussianState f0{{2.2}, SymMatrix::diagonal({0.5})};
    const std::vector<double> grid = linspace(0.0, 10.0, 21);
    const SharpnessReport rep = sharpness_diagnostic(dyn, f0, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        REQUIRE(rep.scaled_w2[i] >= rep.lower[i] * (1.0 - 1e-8));
        REQUIRE(std::isfinite(rep.upper[i]));
    }
    // scalar equal-covariance tail: W2 >= |delta(t)| is an equality in the
    // t -> infinity limit since the covariance converges to sigma B
    const double last = rep.scaled_w2.back();
    REQUIRE(last > 0.0);
}

TEST_CASE("sharpness_diagnostic: random instances never violate the band") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, 0.5 + 0.5 * (trial % 3));
        GaussianState f0{vec_add(dyn.posterior.minimizer, testutil::random_vector(rng, 2)),
                         testutil::random_spd(rng, 2)};
        REQUIRE_NOTHROW(sharpness_diagnostic(dyn, f0, linspace(0.0, 6.0, 13)));
    }
    const Dynamics flow = diag_instance(0.0);
    GaussianState f0{{1.0, 1.0}, SymMatrix::identity(2)};
    REQUIRE_THROWS_AS(sharpness_diagnostic(flow, f0, linspace(0.0, 1.0, 3)), ValidationError);
}

TEST_CASE("triangle decomposition: lemma-level terms dominate the exact distance") {
    std::mt19937_64 rng(23);
    for (double sigma : {0.5, 1.0, 2.0}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, sigma);
        GaussianState f1{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        GaussianState f2{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        const Vector delta1 = vec_sub(f1.mean, dyn.posterior.minimizer);

        for (double t : {0.5, 1.0, 2.0}) {
            const GaussianState a = propagate_mean_field(dyn, f1, t);
            const GaussianState b = propagate_mean_field(dyn, f2, t);
            const double lhs = w2_gaussian(a, b).distance;

            const Matrix u1 = propagator(dyn, f1.cov, 0.0, t, 1e-3).u;
            const Matrix u2 = propagator(dyn, f2.cov, 0.0, t, 1e-3).u;
            const double fade = 1.0 - std::exp(-2.0 * sigma * t);

            // noise-part gap: scaled Gaussian sandwich upper bound
            const double term1 =
                std::sqrt(fade) * frobenius_norm(sym_sqrt(a.cov).mat() - sym_sqrt(b.cov).mat());
            // same density pushed through the two propagators
            const double term2 = op_norm2(u1 - u2) *
                                 std::sqrt(f1.cov.trace() + dot(delta1, delta1));
            // distinct densities pushed through one propagator
            const double term3 = op_norm2(u2) * w2_gaussian(f1, f2).distance;

            REQUIRE(lhs <= (term1 + term2 + term3) * (1.0 + 1e-9) + 1e-12);
        }
    }
}

TEST_CASE("invariant: the normalized mean-field ratio stays bounded") {
    std::mt19937_64 rng(29);
    for (double sigma : {0.0, 0.5, 1.0}) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 2, sigma);
        GaussianState f1{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        GaussianState f2{testutil::random_vector(rng, 2), testutil::random_spd(rng, 2)};
        const StabilityReport rep =
            mean_field_stability(dyn, f1, f2, linspace(0.5, 6.0, 12), 0.5, 1e-3);
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (double r : rep.ratio) {
            lo = std::min(lo, r);
            hi = std::max(hi, r);
        }
        REQUIRE(hi / lo < 1e3);
    }
}

TEST_CASE("sup_norm_gap: diagonal hand case") {
    const SymMatrix a = SymMatrix::diagonal({3.0, 1.0});
    const SymMatrix b = SymMatrix::diagonal({1.0, 1.0});
    std::vector<Vector> pool = {{1.0, 0.0}, {0.0, 1.0}, {std::sqrt(0.5), std::sqrt(0.5)}};
    REQUIRE(sup_norm_gap(a.mat(), b.mat(), pool) == Catch::Approx(2.0).margin(1e-12));
}

TEST_CASE("check_sqrt_inequalities: edge cases and randomized sweep") {
    NoiseStream rng(7);
    const SqrtInequalityReport rep = check_sqrt_inequalities(200, 3, rng);
    REQUIRE(rep.trials == 200);
    REQUIRE(rep.violations_concavity == 0);
    REQUIRE(rep.violations_bridge == 0);
    REQUIRE(rep.worst_frobenius_ratio > 0.0);
    REQUIRE(std::isfinite(rep.worst_frobenius_ratio));

    // M1 = M2: all gaps vanish, no violations possible
    const SymMatrix m = SymMatrix::diagonal({1.0, 2.0});
    std::vector<Vector> pool = {{1.0, 0.0}, {0.0, 1.0}};
    REQUIRE(sup_norm_gap(sym_sqrt(m).mat(), sym_sqrt(m).mat(), pool) == 0.0);

    // M = 0 reduces the shifted gap to the root gap itself
    NoiseStream rng2(9);
    std::vector<Vector> pool2;
    for (int i = 0; i < 200; ++i) {
        Vector x = rng2.normal_vector(2);
        pool2.push_back(vec_scale(x, 1.0 / norm2(x)));
    }
    const SymMatrix m1 = SymMatrix::diagonal({2.0, 0.5});
    const SymMatrix m2 = SymMatrix::diagonal({1.0, 1.5});
    const double lhs = sup_norm_gap(sym_sqrt(m1).mat(), sym_sqrt(m2).mat(), pool2);
    const double rhs = sup_norm_gap(sym_sqrt(m1).mat(), sym_sqrt(m2).mat(), pool2);
    REQUIRE(lhs == rhs);
}

TEST_CASE("fit_rate: exact synthetic series") {
    std::vector<double> t, w2a, w2b;
    for (int i = 0; i <= 20; ++i) {
        const double ti = 0.5 * i;
        t.push_back(ti);
        w2a.push_back(std::exp(-2.0 * ti));
        w2b.push_back(1.0 / std::sqrt(2.0 * ti + 1.0));
    }
    REQUIRE(fit_rate(t, w2a, 0.5, 1.0).slope == Catch::Approx(-2.0).margin(1e-9));
    REQUIRE(fit_rate(t, w2b, 0.5, 0.0).slope == Catch::Approx(-0.5).margin(1e-9));

    // underflow truncation warns and still fits
    std::vector<double> w2c = w2a;
    w2c.back() = 0.0;
    const RateFit fit = fit_rate(t, w2c, 1.0, 1.0);
    REQUIRE(fit.truncated);
    REQUIRE(fit.slope == Catch::Approx(-2.0).margin(1e-9));

    REQUIRE_THROWS_AS(fit_rate({0.0, 1.0}, {1.0, 0.5}, 1.0, 1.0), ValidationError);
}
