#include <catch2/catch.hpp>

#include "fhn/ode.hpp"
#include "fhn/rng.hpp"
#include "oracles.hpp"

using namespace fhn;

TEST_CASE("trajectory starts at the initial condition", "[ode]") {
    SimConfig cfg;
    cfg.n_t = 1;
    cfg.tau = 0.1;
    Trajectory traj = simulate_fhn({0.3, 0.5, 2.5}, cfg);
    REQUIRE(traj.u.size() == 2);
    REQUIRE(traj.v.size() == 2);
    REQUIRE(traj.u[0] == cfg.u0);
    REQUIRE(traj.v[0] == cfg.v0);
}

TEST_CASE("default simulation is finite with 2001 nodes", "[ode]") {
    Trajectory traj = simulate_fhn({0.4, 0.4, 3.4}, SimConfig{});
    REQUIRE(traj.u.size() == 2001);
    for (double x : traj.u) REQUIRE(std::isfinite(x));
    for (double x : traj.v) REQUIRE(std::isfinite(x));
    // spiking trace: u must traverse well beyond the resting value
    double lo = 1e9, hi = -1e9;
    for (double x : traj.u) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    REQUIRE(hi - lo > 2.0);
}

TEST_CASE("invalid configs are rejected", "[ode]") {
    SimConfig bad;
    bad.n_t = 0;
    REQUIRE_THROWS_AS(simulate_fhn({0.4, 0.4, 3.4}, bad), ConfigError);
    REQUIRE_THROWS_AS(simulate_fhn({0.4, 0.4, -1.0}, SimConfig{}), ConfigError);
}

TEST_CASE("numerical blow-up reports the offending step", "[ode]") {
    SimConfig cfg;
    cfg.u0 = 50.0; // far outside the cubic's basin at this step size
    try {
        simulate_fhn({0.4, 0.4, 3.4}, cfg);
        FAIL("expected NonFiniteError");
    } catch (const NonFiniteError& err) {
        REQUIRE(err.step >= 1);
        REQUIRE(err.step <= cfg.n_t);
    }
}

TEST_CASE("Heun tracks an RK4 fine-step reference on a quiescent set", "[ode]") {
    // non-spiking parameters: the trajectory decays to the stable fixed point
    SimConfig cfg;
    DynParams p{0.0, 1.0, 2.5};
    Trajectory heun = simulate_fhn(p, cfg);
    Trajectory ref = oracle::rk4_reference(p, cfg, 10);
    double maxdev = 0.0;
    for (std::size_t j = 0; j <= cfg.n_t; ++j) {
        maxdev = std::max(maxdev, std::fabs(heun.u[j] - ref.u[j]));
        maxdev = std::max(maxdev, std::fabs(heun.v[j] - ref.v[j]));
    }
    REQUIRE(maxdev <= 1e-3);
}

TEST_CASE("Heun deviation on a spiking set stays in the oracle-measured band", "[ode]") {
    // (0.5, 0.7, 3.0) sits on a limit cycle; per-step deviation after five
    // spikes is dominated by phase drift. Oracle-measured value: 0.8606.
    SimConfig cfg;
    DynParams p{0.5, 0.7, 3.0};
    Trajectory heun = simulate_fhn(p, cfg);
    Trajectory ref = oracle::rk4_reference(p, cfg, 10);
    double maxdev = 0.0;
    for (std::size_t j = 0; j <= cfg.n_t; ++j)
        maxdev = std::max(maxdev, std::fabs(heun.u[j] - ref.u[j]));
    REQUIRE(maxdev > 0.5);
    REQUIRE(maxdev < 1.2);
}

TEST_CASE("RK2 order: halving h reduces the error by about 4", "[ode]") {
    for (DynParams p : {DynParams{0.0, 1.0, 2.5}, DynParams{0.2, 1.2, 2.6}}) {
        auto err_at = [&](std::size_t n_t) {
            SimConfig cfg;
            cfg.n_t = n_t;
            Trajectory heun = simulate_fhn(p, cfg);
            Trajectory ref = oracle::rk4_reference(p, cfg, 20);
            double mx = 0.0;
            for (std::size_t j = 0; j <= cfg.n_t; ++j) {
                mx = std::max(mx, std::fabs(heun.u[j] - ref.u[j]));
                mx = std::max(mx, std::fabs(heun.v[j] - ref.v[j]));
            }
            return mx;
        };
        double ratio = err_at(2000) / err_at(4000);
        REQUIRE(ratio >= 3.5);
        REQUIRE(ratio <= 4.5);
    }
}

TEST_CASE("simulation is deterministic", "[ode]") {
    Trajectory a = simulate_fhn({0.4, 0.4, 3.4}, SimConfig{});
    Trajectory b = simulate_fhn({0.4, 0.4, 3.4}, SimConfig{});
    REQUIRE(a.u == b.u);
    REQUIRE(a.v == b.v);
}

TEST_CASE("observation is the u-slice without the initial value", "[ode]") {
    SimConfig cfg;
    DynParams p{0.6, 0.2, 4.0};
    Trajectory traj = simulate_fhn(p, cfg);
    std::vector<double> obs = parameter_to_observation(p, cfg);
    REQUIRE(obs.size() == cfg.n_t);
    for (std::size_t j = 0; j < cfg.n_t; ++j) REQUIRE(obs[j] == traj.u[j + 1]);
}

TEST_CASE("observation responds continuously to tiny parameter changes", "[ode]") {
    SimConfig cfg;
    std::vector<double> a = parameter_to_observation({0.4, 0.4, 3.4}, cfg);
    std::vector<double> b = parameter_to_observation({0.4, 0.4 + 1e-12, 3.4}, cfg);
    double maxdiff = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) maxdiff = std::max(maxdiff, std::fabs(a[j] - b[j]));
    REQUIRE(maxdiff < 1e-6);
}

TEST_CASE("neg_log_posterior vanishes exactly at the noise-free truth", "[ode]") {
    SimConfig cfg;
    PriorConfig prior;
    LikelihoodConfig like;
    DynParams p = DynParams::from_vec(prior.mean);
    std::vector<double> y = parameter_to_observation(p, cfg);
    REQUIRE(neg_log_posterior(p, y, like, prior, cfg) == 0.0);
}

TEST_CASE("constant-offset misfit has the closed-form value", "[ode]") {
    SimConfig cfg;
    PriorConfig prior;
    LikelihoodConfig like;
    DynParams p = DynParams::from_vec(prior.mean);
    const double c = 0.37;
    std::vector<double> y = parameter_to_observation(p, cfg);
    for (double& v : y) v += c;
    double expected = 0.5 * like.gamma() * cfg.h_t() * static_cast<double>(cfg.n_t) * c * c;
    REQUIRE(neg_log_posterior(p, y, like, prior, cfg) ==
            Approx(expected).epsilon(1e-12));
}

TEST_CASE("neg_log_posterior matches a term-by-term re-evaluation", "[ode]") {
    SimConfig cfg;
    PriorConfig prior;
    LikelihoodConfig like;
    RngStream rng(11, 0);
    for (int trial = 0; trial < 5; ++trial) {
        DynParams truth{rng.uniform(-0.2, 1.0), rng.uniform(-0.4, 1.2), rng.uniform(2.0, 5.0)};
        std::vector<double> y = parameter_to_observation(truth, cfg);
        for (double& v : y) v += 0.1 * rng.normal();
        DynParams p{rng.uniform(-0.2, 1.0), rng.uniform(-0.4, 1.2), rng.uniform(2.0, 5.0)};

        // independent re-evaluation: misfit sum + prior quadratic, written out
        std::vector<double> f = parameter_to_observation(p, cfg);
        double misfit = 0.0;
        for (std::size_t j = 0; j < y.size(); ++j) misfit += (y[j] - f[j]) * (y[j] - f[j]);
        double direct = 0.5 * like.gamma() * cfg.h_t() * misfit;
        Vec3 th = p.as_vec();
        for (std::size_t i = 0; i < 3; ++i) {
            double d = th[i] - prior.mean[i];
            direct += 0.5 * d * d / (prior.sigma[i] * prior.sigma[i]);
        }
        REQUIRE(neg_log_posterior(p, y, like, prior, cfg) == Approx(direct).epsilon(1e-12));
        REQUIRE(neg_log_posterior(p, y, like, prior, cfg) >= 0.0);
    }
}
