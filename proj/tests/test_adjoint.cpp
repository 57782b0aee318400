#include <catch2/catch.hpp>

#include <cmath>

#include "fhn/adjoint.hpp"
#include "fhn/noise.hpp"
#include "oracles.hpp"

using namespace fhn;

namespace {

struct Problem {
    SimConfig cfg;
    PriorConfig prior;
    LikelihoodConfig like;
    DynParams params;
    std::vector<double> y_obs;
};

DynParams random_in_bounds(RngStream& rng) {
    return {rng.uniform(-0.2, 1.0), rng.uniform(-0.4, 1.2), rng.uniform(2.0, 5.0)};
}

Problem noisy_problem(std::uint64_t stream) {
    Problem pb;
    RngStream rng(71, stream);
    DynParams truth = random_in_bounds(rng);
    NoiseSpec spec;
    spec.kind = NoiseKind::Additive;
    spec.rho = 0.8;
    spec.sigma = 0.07;
    pb.y_obs = make_observation(truth, spec, pb.cfg, rng);
    pb.params = random_in_bounds(rng);
    return pb;
}

double phi_of(const Problem& pb, const DynParams& p) {
    return neg_log_posterior(p, pb.y_obs, pb.like, pb.prior, pb.cfg);
}

} // namespace

TEST_CASE("zero misfit gives an identically zero adjoint", "[adjoint]") {
    Problem pb;
    pb.params = {0.5, 0.3, 3.0};
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    Trajectory traj = simulate_fhn(pb.params, pb.cfg);
    AdjointState adj = solve_adjoint(pb.params, traj, pb.y_obs, pb.like, pb.cfg);
    for (double v : adj.lambda) REQUIRE(std::fabs(v) <= 1e-12);
    for (double v : adj.nu) REQUIRE(std::fabs(v) <= 1e-12);
}

TEST_CASE("adjoint final conditions are exactly zero", "[adjoint]") {
    Problem pb = noisy_problem(1);
    Trajectory traj = simulate_fhn(pb.params, pb.cfg);
    AdjointState adj = solve_adjoint(pb.params, traj, pb.y_obs, pb.like, pb.cfg);
    REQUIRE(adj.lambda.size() == pb.cfg.n_t + 1);
    REQUIRE(adj.lambda[pb.cfg.n_t] == 0.0);
    REQUIRE(adj.nu[pb.cfg.n_t] == 0.0);
}

TEST_CASE("adjoint gradient matches finite differences at 20 random points", "[adjoint]") {
    double worst = 0.0;
    for (std::uint64_t trial = 0; trial < 20; ++trial) {
        Problem pb = noisy_problem(10 + trial);
        Vec3 g = gradient(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
        Vec3 fd = oracle::fd_gradient([&](const DynParams& p) { return phi_of(pb, p); },
                                      pb.params, 1e-5);
        for (std::size_t k = 0; k < 3; ++k) {
            double rel = std::fabs(g[k] - fd[k]) / std::fabs(fd[k]);
            worst = std::max(worst, rel);
        }
    }
    INFO("worst relative error " << worst);
    REQUIRE(worst <= 1e-4);
}

TEST_CASE("gradient vanishes at the prior mean with exact data", "[adjoint]") {
    Problem pb;
    pb.params = DynParams::from_vec(pb.prior.mean);
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    Vec3 g = gradient(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    for (double v : g) REQUIRE(std::fabs(v) <= 1e-10);
}

TEST_CASE("prior-only gradient is the exact precision-weighted offset", "[adjoint]") {
    Problem pb = noisy_problem(2);
    pb.like = LikelihoodConfig::from_gamma(0.0);
    Vec3 g = gradient(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    Vec3 d = pb.params.as_vec();
    for (std::size_t i = 0; i < 3; ++i) d[i] -= pb.prior.mean[i];
    Vec3 expected = pb.prior.precision() * d;
    for (std::size_t k = 0; k < 3; ++k) REQUIRE(g[k] == expected[k]);
}

TEST_CASE("incremental state: zero direction, zero start, FD agreement", "[adjoint]") {
    Problem pb = noisy_problem(3);
    Trajectory traj = simulate_fhn(pb.params, pb.cfg);

    IncrementalState zero = solve_incremental_state(pb.params, traj, {0, 0, 0}, pb.cfg);
    for (double v : zero.u_tilde) REQUIRE(v == 0.0);
    for (double v : zero.v_tilde) REQUIRE(v == 0.0);

    RngStream rng(72, 0);
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    IncrementalState inc = solve_incremental_state(pb.params, traj, dir, pb.cfg);
    REQUIRE(inc.u_tilde[0] == 0.0);
    REQUIRE(inc.v_tilde[0] == 0.0);

    const double eps = 1e-5;
    Vec3 plus = pb.params.as_vec(), minus = pb.params.as_vec();
    for (std::size_t i = 0; i < 3; ++i) {
        plus[i] += eps * dir[i];
        minus[i] -= eps * dir[i];
    }
    std::vector<double> fp = parameter_to_observation(DynParams::from_vec(plus), pb.cfg);
    std::vector<double> fm = parameter_to_observation(DynParams::from_vec(minus), pb.cfg);
    double max_fd = 0.0, max_err = 0.0;
    for (std::size_t j = 0; j < pb.cfg.n_t; ++j) {
        double fd = (fp[j] - fm[j]) / (2.0 * eps);
        max_fd = std::max(max_fd, std::fabs(fd));
        max_err = std::max(max_err, std::fabs(fd - inc.u_tilde[j + 1]));
    }
    REQUIRE(max_err / max_fd <= 1e-3);
}

TEST_CASE("incremental adjoint: zero inputs and zero final conditions", "[adjoint]") {
    Problem pb = noisy_problem(4);
    Trajectory traj = simulate_fhn(pb.params, pb.cfg);

    IncrementalState zero_inc;
    zero_inc.u_tilde.assign(pb.cfg.n_t + 1, 0.0);
    zero_inc.v_tilde.assign(pb.cfg.n_t + 1, 0.0);
    IncrementalAdjoint zero =
        solve_incremental_adjoint(pb.params, traj, pb.y_obs, zero_inc, {0, 0, 0}, pb.like, pb.cfg);
    for (double v : zero.lambda_tilde) REQUIRE(v == 0.0);
    for (double v : zero.nu_tilde) REQUIRE(v == 0.0);

    RngStream rng(73, 0);
    Vec3 dir{rng.normal(), rng.normal(), rng.normal()};
    IncrementalState inc = solve_incremental_state(pb.params, traj, dir, pb.cfg);
    IncrementalAdjoint inc_adj =
        solve_incremental_adjoint(pb.params, traj, pb.y_obs, inc, dir, pb.like, pb.cfg);
    REQUIRE(inc_adj.lambda_tilde[pb.cfg.n_t] == 0.0);
    REQUIRE(inc_adj.nu_tilde[pb.cfg.n_t] == 0.0);
}

TEST_CASE("prior-only matvec is exactly L*dir and the matvec is linear", "[adjoint]") {
    Problem pb = noisy_problem(5);
    LikelihoodConfig prior_only = LikelihoodConfig::from_gamma(0.0);
    RngStream rng(74, 0);
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    Vec3 hv = hessian_matvec(pb.params, pb.y_obs, d, prior_only, pb.prior, pb.cfg);
    Vec3 expected = pb.prior.precision() * d;
    for (std::size_t k = 0; k < 3; ++k) REQUIRE(hv[k] == expected[k]);

    Vec3 d1{rng.normal(), rng.normal(), rng.normal()};
    Vec3 d2{rng.normal(), rng.normal(), rng.normal()};
    const double a = 1.7, b = -0.6;
    Vec3 combo{a * d1[0] + b * d2[0], a * d1[1] + b * d2[1], a * d1[2] + b * d2[2]};
    Vec3 h_combo = hessian_matvec(pb.params, pb.y_obs, combo, pb.like, pb.prior, pb.cfg);
    Vec3 h1 = hessian_matvec(pb.params, pb.y_obs, d1, pb.like, pb.prior, pb.cfg);
    Vec3 h2 = hessian_matvec(pb.params, pb.y_obs, d2, pb.like, pb.prior, pb.cfg);
    double scale = std::max({std::fabs(h_combo[0]), std::fabs(h_combo[1]), std::fabs(h_combo[2])});
    for (std::size_t k = 0; k < 3; ++k)
        REQUIRE(std::fabs(h_combo[k] - (a * h1[k] + b * h2[k])) / scale <= 1e-10);
}

TEST_CASE("matvec matches the finite-difference Hessian action on the gradient", "[adjoint]") {
    Problem pb = noisy_problem(6);
    RngStream rng(75, 0);
    Vec3 d{rng.normal(), rng.normal(), rng.normal()};
    double dn = norm(d);
    for (double& x : d) x /= dn;
    Vec3 hv = hessian_matvec(pb.params, pb.y_obs, d, pb.like, pb.prior, pb.cfg);
    const double eps = 1e-5;
    Vec3 plus = pb.params.as_vec(), minus = pb.params.as_vec();
    for (std::size_t i = 0; i < 3; ++i) {
        plus[i] += eps * d[i];
        minus[i] -= eps * d[i];
    }
    Vec3 gp = gradient(DynParams::from_vec(plus), pb.y_obs, pb.like, pb.prior, pb.cfg);
    Vec3 gm = gradient(DynParams::from_vec(minus), pb.y_obs, pb.like, pb.prior, pb.cfg);
    for (std::size_t k = 0; k < 3; ++k) {
        double fd = (gp[k] - gm[k]) / (2.0 * eps);
        REQUIRE(std::fabs(hv[k] - fd) / std::fabs(fd) <= 1e-3);
    }
}

TEST_CASE("matvec symmetry holds to rounding level", "[adjoint]") {
    Problem pb = noisy_problem(7);
    RngStream rng(76, 0);
    for (int trial = 0; trial < 5; ++trial) {
        Vec3 d1{rng.normal(), rng.normal(), rng.normal()};
        Vec3 d2{rng.normal(), rng.normal(), rng.normal()};
        Vec3 h1 = hessian_matvec(pb.params, pb.y_obs, d1, pb.like, pb.prior, pb.cfg);
        Vec3 h2 = hessian_matvec(pb.params, pb.y_obs, d2, pb.like, pb.prior, pb.cfg);
        double ip1 = dot(h1, d2), ip2 = dot(d1, h2);
        REQUIRE(std::fabs(ip1 - ip2) / std::max(std::fabs(ip1), std::fabs(ip2)) <= 1e-8);
    }
}

TEST_CASE("prior-only Hessian is the prior precision", "[adjoint]") {
    Problem pb = noisy_problem(8);
    Hessian3 h = assemble_hessian(pb.params, pb.y_obs, LikelihoodConfig::from_gamma(0.0),
                                  pb.prior, pb.cfg);
    Mat3 L = pb.prior.precision();
    for (std::size_t i = 0; i < 9; ++i) REQUIRE(h.matrix.a[i] == L.a[i]);
    REQUIRE(h.asymmetry == 0.0);
    REQUIRE_FALSE(h.asymmetry_exceeded);
    REQUIRE(L(0, 0) == Approx(1.0 / 0.09).epsilon(1e-14));
    REQUIRE(L(1, 1) == Approx(1.0 / 0.16).epsilon(1e-14));
    REQUIRE(L(2, 2) == Approx(1.0 / 0.16).epsilon(1e-14));
}

TEST_CASE("assembled Hessian is symmetric, near-symmetric raw, and FD-consistent", "[adjoint]") {
    Problem pb = noisy_problem(9);
    Hessian3 h = assemble_hessian(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) REQUIRE(h.matrix(i, j) == h.matrix(j, i));
    REQUIRE(h.asymmetry <= Hessian3::kAsymmetryTol);
    REQUIRE_FALSE(h.asymmetry_exceeded);

    Mat3 fd = oracle::fd_hessian([&](const DynParams& p) { return phi_of(pb, p); }, pb.params,
                                 1e-5);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j)
            REQUIRE(std::fabs(h.matrix(i, j) - fd(i, j)) / std::fabs(fd(i, j)) <= 1e-2);
}

TEST_CASE("Hessian at a zero-residual truth is positive definite", "[adjoint]") {
    Problem pb;
    pb.params = {0.4, 0.4, 3.4};
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    Hessian3 h = assemble_hessian(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    EigenSym3 eig = eigen_sym3(h.matrix);
    REQUIRE(eig.values[0] > 0.0);
}

TEST_CASE("posterior covariance inverts the Hessian", "[adjoint]") {
    Hessian3 diag;
    diag.matrix = Mat3::diag(4.0, 9.0, 16.0);
    PosteriorCov cov = posterior_covariance(diag);
    REQUIRE(cov.gamma(0, 0) == Approx(0.25).epsilon(1e-14));
    REQUIRE(cov.gamma(1, 1) == Approx(1.0 / 9.0).epsilon(1e-14));
    REQUIRE(cov.gamma(2, 2) == Approx(0.0625).epsilon(1e-14));

    Problem pb;
    pb.params = {0.4, 0.4, 3.4};
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    Hessian3 h = assemble_hessian(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    PosteriorCov full = posterior_covariance(h);
    Mat3 prod = full.gamma * h.matrix;
    REQUIRE(oracle::frob_rel_diff(prod, Mat3::identity()) <= 1e-10);
    // round trip: inv(Gamma) recovers H
    REQUIRE(oracle::frob_rel_diff(inverse3(full.gamma), h.matrix) <= 1e-8);
}

TEST_CASE("posterior covariance rejects indefinite input", "[adjoint]") {
    Hessian3 bad;
    bad.matrix = Mat3::diag(1.0, 1.0, -2.0);
    REQUIRE_THROWS_AS(posterior_covariance(bad), NotSpdError);
}

TEST_CASE("zero-residual covariance matches the Gauss-Newton closed form", "[adjoint]") {
    // with y = f(theta) the adjoint vanishes, so H = gamma*h J^T J + L, the
    // linearized-model formula; J comes from central differences of f
    Problem pb;
    pb.params = {0.4, 0.4, 3.4};
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    Hessian3 h = assemble_hessian(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg);
    PosteriorCov cov = posterior_covariance(h);

    const double eps = 1e-5;
    std::vector<std::vector<double>> jac(3);
    for (std::size_t k = 0; k < 3; ++k) {
        Vec3 plus = pb.params.as_vec(), minus = pb.params.as_vec();
        plus[k] += eps;
        minus[k] -= eps;
        std::vector<double> fp = parameter_to_observation(DynParams::from_vec(plus), pb.cfg);
        std::vector<double> fm = parameter_to_observation(DynParams::from_vec(minus), pb.cfg);
        jac[k].resize(pb.cfg.n_t);
        for (std::size_t j = 0; j < pb.cfg.n_t; ++j) jac[k][j] = (fp[j] - fm[j]) / (2.0 * eps);
    }
    Mat3 gn = pb.prior.precision();
    const double w = pb.like.gamma() * pb.cfg.h_t();
    for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
            double s = 0.0;
            for (std::size_t j = 0; j < pb.cfg.n_t; ++j) s += jac[a][j] * jac[b][j];
            gn(a, b) += w * s;
        }
    Mat3 gn_cov = inverse3(gn);
    REQUIRE(oracle::frob_rel_diff(cov.gamma, gn_cov) <= 1e-4);
}

TEST_CASE("screening: identical SPD matrices are all accepted", "[adjoint]") {
    Hessian3 h;
    h.matrix = Mat3::diag(2.0, 3.0, 4.0);
    std::vector<Hessian3> hs(10, h);
    for (const HessianQuality& q : screen_hessians(hs))
        REQUIRE(q.verdict == HessianVerdict::Accepted);
}

TEST_CASE("screening: an extreme s1 outlier is flagged ill-conditioned", "[adjoint]") {
    std::vector<Hessian3> hs;
    for (int i = 0; i < 20; ++i) {
        Hessian3 h;
        h.matrix = Mat3::diag(2.0, 3.0, 4.0);
        hs.push_back(h);
    }
    Hessian3 outlier;
    outlier.matrix = Mat3::diag(2.0, 3.0, 4.0e6); // s1 a million times the rest
    hs.push_back(outlier);
    std::vector<HessianQuality> q = screen_hessians(hs);
    REQUIRE(q.back().verdict == HessianVerdict::IllConditioned);
    REQUIRE(q.back().singular_values[0] == Approx(4.0e6));
    for (std::size_t i = 0; i + 1 < q.size(); ++i)
        REQUIRE(q[i].verdict == HessianVerdict::Accepted);
}

TEST_CASE("screening marks negative-definite matrices first", "[adjoint]") {
    std::vector<Hessian3> hs;
    for (int i = 0; i < 5; ++i) {
        Hessian3 h;
        h.matrix = Mat3::diag(2.0, 3.0, 4.0);
        hs.push_back(h);
    }
    Hessian3 nd;
    nd.matrix = Mat3::diag(2.0, 3.0, -1.0);
    hs.push_back(nd);
    std::vector<HessianQuality> q = screen_hessians(hs);
    REQUIRE(q.back().verdict == HessianVerdict::NegativeDefinite);
}

TEST_CASE("degenerate proposal freezes the chain with full acceptance", "[adjoint]") {
    Problem pb;
    pb.params = {0.4, 0.4, 3.4};
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    RngStream rng(78, 0);
    MhResult res = mh_sample(pb.params, pb.y_obs, pb.like, pb.prior, pb.cfg, 50, {0, 0, 0}, rng);
    REQUIRE(res.chain.size() == 50);
    REQUIRE(res.acceptance_rate == 1.0);
    for (const Vec3& s : res.chain) REQUIRE(s == pb.params.as_vec());
}

TEST_CASE("prior-target chain covariance approaches the prior covariance", "[adjoint]") {
    Problem pb;
    pb.params = DynParams::from_vec(pb.prior.mean);
    pb.y_obs = parameter_to_observation(pb.params, pb.cfg);
    LikelihoodConfig prior_only = LikelihoodConfig::from_gamma(0.0);
    // 2.38/sqrt(3) times the prior marginals (well-tuned random walk)
    Vec3 scale;
    for (std::size_t i = 0; i < 3; ++i) scale[i] = 1.374 * pb.prior.sigma[i];
    RngStream rng(79, 0);
    MhResult res =
        mh_sample(pb.params, pb.y_obs, prior_only, pb.prior, pb.cfg, 100000, scale, rng);
    Mat3 cov = chain_covariance(res.chain, 0.2);
    REQUIRE(oracle::frob_rel_diff(cov, pb.prior.covariance()) <= 0.15);
}

TEST_CASE("screening verdicts are invariant to sample order", "[adjoint]") {
    RngStream rng(80, 0);
    std::vector<Hessian3> hs;
    for (int i = 0; i < 40; ++i) {
        Hessian3 h;
        h.matrix = Mat3::diag(std::exp(rng.normal(1.0, 1.5)), std::exp(rng.normal(0.0, 1.5)),
                              std::exp(rng.normal(-1.0, 1.5)));
        hs.push_back(h);
    }
    std::vector<HessianQuality> base = screen_hessians(hs);
    std::vector<std::size_t> perm(hs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = (7 * i + 3) % perm.size();
    std::vector<Hessian3> shuffled(hs.size());
    for (std::size_t i = 0; i < perm.size(); ++i) shuffled[i] = hs[perm[i]];
    std::vector<HessianQuality> out = screen_hessians(shuffled);
    for (std::size_t i = 0; i < perm.size(); ++i)
        REQUIRE(out[i].verdict == base[perm[i]].verdict);
}
