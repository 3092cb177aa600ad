#include <catch2/catch_amalgamated.hpp>

#include "mflab/problem.hpp"
#include "test_helpers.hpp"

using namespace mflab;

namespace {

// scalar instance: G=2, Gamma=1, Gamma0=1, y=3
Dynamics scalar_instance(double sigma = 1.0) {
    ProblemSpec p;
    p.forward = Matrix(1, 1);
    p.forward(0, 0) = 2.0;
    p.noise_cov = SymMatrix::identity(1);
    p.prior_cov = SymMatrix::identity(1);
    p.observation = {3.0};
    return make_dynamics(p, sigma);
}

}  // namespace

TEST_CASE("build_posterior: scalar hand case") {
    const Dynamics dyn = scalar_instance();
    REQUIRE(dyn.posterior.precision(0, 0) == Catch::Approx(5.0).margin(1e-14));
    REQUIRE(dyn.posterior.b(0, 0) == Catch::Approx(0.2).margin(1e-14));
    REQUIRE(dyn.posterior.minimizer[0] == Catch::Approx(1.2).margin(1e-14));
}

TEST_CASE("build_posterior: zero forward map gives the prior") {
    ProblemSpec p;
    p.forward = Matrix(2, 2);  // all zero
    p.noise_cov = SymMatrix::identity(2);
    p.prior_cov = SymMatrix::diagonal({2.0, 0.5});
    p.observation = {1.0, -1.0};
    const Posterior post = build_posterior(p);
    REQUIRE(testutil::max_abs_diff(post.b.mat(), p.prior_cov.mat()) <= 1e-14);
    REQUIRE(norm2(post.minimizer) <= 1e-14);
}

TEST_CASE("build_posterior: identity instance in d=2") {
    ProblemSpec p;
    p.forward = Matrix::identity(2);
    p.noise_cov = SymMatrix::identity(2);
    p.prior_cov = SymMatrix::identity(2);
    p.observation = {2.0, 0.0};
    const Posterior post = build_posterior(p);
    REQUIRE(testutil::max_abs_diff(post.b.mat(), Matrix::identity(2) * 0.5) <= 1e-14);
    REQUIRE(post.minimizer[0] == Catch::Approx(1.0).margin(1e-14));
    REQUIRE(post.minimizer[1] == Catch::Approx(0.0).margin(1e-14));
}

TEST_CASE("build_posterior: validation of SPD inputs") {
    ProblemSpec p;
    p.forward = Matrix::identity(2);
    p.noise_cov = SymMatrix::diagonal({1.0, -1.0});
    p.prior_cov = SymMatrix::identity(2);
    p.observation = {0.0, 0.0};
    REQUIRE_THROWS_AS(build_posterior(p), ValidationError);
    p.noise_cov = SymMatrix::identity(2);
    p.prior_cov = SymMatrix::diagonal({0.0, 1.0});
    REQUIRE_THROWS_AS(build_posterior(p), ValidationError);
}

TEST_CASE("posterior invariants: B Binv = I, grad at minimizer vanishes") {
    std::mt19937_64 rng(101);
    for (int trial = 0; trial < 10; ++trial) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 4, 0.5);
        const Matrix prod = dyn.posterior.b.mat() * dyn.posterior.precision.mat();
        REQUIRE(frobenius_norm(prod - Matrix::identity(3)) <= 1e-10);
        REQUIRE(norm2(grad_misfit(dyn, dyn.posterior.minimizer)) <= 1e-10);
        REQUIRE(check_spd(dyn.posterior.precision).is_spd);
    }
}

TEST_CASE("misfit: scalar hand cases and minimality") {
    const Dynamics dyn = scalar_instance();
    REQUIRE(misfit(dyn, {1.0}) == Catch::Approx(1.0).margin(1e-14));

    // u = 0, y = 0 gives zero misfit
    ProblemSpec p = dyn.problem;
    p.observation = {0.0};
    const Dynamics zero_obs = make_dynamics(p, 0.0);
    REQUIRE(misfit(zero_obs, {0.0}) == 0.0);

    // u0 minimizes: misfit(u) >= misfit(u0) for random u
    std::mt19937_64 rng(55);
    const Dynamics rnd = testutil::random_dynamics(rng, 3, 2, 0.0);
    const double at_min = misfit(rnd, rnd.posterior.minimizer);
    for (int trial = 0; trial < 100; ++trial) {
        const Vector u = testutil::random_vector(rng, 3, 2.0);
        REQUIRE(misfit(rnd, u) >= at_min - 1e-12);
    }
}

TEST_CASE("grad_misfit: hand case, zero at minimizer, finite differences") {
    const Dynamics dyn = scalar_instance();
    REQUIRE(grad_misfit(dyn, {1.0})[0] == Catch::Approx(-1.0).margin(1e-12));
    REQUIRE(norm2(grad_misfit(dyn, dyn.posterior.minimizer)) <= 1e-12);

    std::mt19937_64 rng(77);
    const Dynamics rnd = testutil::random_dynamics(rng, 3, 2, 0.0);
    const Vector u = testutil::random_vector(rng, 3);
    const Vector g = grad_misfit(rnd, u);
    const double eps = 1e-6;
    for (std::size_t i = 0; i < 3; ++i) {
        Vector up = u, dn = u;
        up[i] += eps;
        dn[i] -= eps;
        const double fd = (misfit(rnd, up) - misfit(rnd, dn)) / (2.0 * eps);
        REQUIRE(g[i] == Catch::Approx(fd).margin(1e-6));
    }
}

TEST_CASE("property: the two gradient formulas agree") {
    std::mt19937_64 rng(88);
    for (int trial = 0; trial < 20; ++trial) {
        const Dynamics dyn = testutil::random_dynamics(rng, 3, 3, 1.0);
        const Vector u = testutil::random_vector(rng, 3, 2.0);
        const Vector direct = grad_misfit(dyn, u);
        const Vector via_posterior =
            dyn.posterior.precision * vec_sub(u, dyn.posterior.minimizer);
        const double scale = std::max(1.0, norm2(direct));
        REQUIRE(norm2(vec_sub(direct, via_posterior)) <= 1e-10 * scale);
    }
}

TEST_CASE("property: misfit is exactly quadratic around the minimizer") {
    std::mt19937_64 rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        const Dynamics dyn = testutil::random_dynamics(rng, 2, 3, 0.0);
        const Vector u = testutil::random_vector(rng, 2, 3.0);
        const Vector du = vec_sub(u, dyn.posterior.minimizer);
        const double quad = misfit(dyn, dyn.posterior.minimizer) +
                            0.5 * dot(du, dyn.posterior.precision * du);
        REQUIRE(misfit(dyn, u) == Catch::Approx(quad).margin(1e-10 * std::max(1.0, quad)));
    }
}

TEST_CASE("dimension mismatches are rejected") {
    const Dynamics dyn = scalar_instance();
    REQUIRE_THROWS_AS(misfit(dyn, {1.0, 2.0}), ValidationError);
    REQUIRE_THROWS_AS(grad_misfit(dyn, {1.0, 2.0}), ValidationError);
    REQUIRE_THROWS_AS(make_dynamics(dyn.problem, -0.5), ValidationError);
}
