#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "fhn/errors.hpp"
#include "fhn/linalg.hpp"

namespace fhn {

/// The three FitzHugh-Nagumo model parameters. theta2 is a time-scale factor
/// and must be positive (it divides the recovery equation and every adjoint).
struct DynParams {
    double theta0 = 0.4;
    double theta1 = 0.4;
    double theta2 = 3.4;

    Vec3 as_vec() const { return {theta0, theta1, theta2}; }
    static DynParams from_vec(const Vec3& v) { return {v[0], v[1], v[2]}; }
};

struct SimConfig {
    double tau = 200.0;   // final time [ms]
    std::size_t n_t = 2000;
    double z = -0.4;      // constant stimulus
    double u0 = -1.0;     // initial membrane potential (not stated by the source model; configurable)
    double v0 = 1.0;      // initial recovery value

    double h_t() const { return tau / static_cast<double>(n_t); }

    void validate() const {
        if (n_t < 1) throw ConfigError("SimConfig: n_t must be >= 1");
        if (!(tau > 0.0)) throw ConfigError("SimConfig: tau must be > 0");
    }
};

/// Discrete state time series on the uniform grid t_j = j * h_t, j = 0..n_t.
struct Trajectory {
    std::vector<double> u;
    std::vector<double> v;
};

/// Misfit weight gamma = 1 / (sigma_noise * tau)^2. The field is the scalar
/// sigma_noise * tau; an infinite value yields gamma = 0 (prior-only).
struct LikelihoodConfig {
    double sigma_noise_tau = 0.1;

    double gamma() const { return 1.0 / (sigma_noise_tau * sigma_noise_tau); }

    static LikelihoodConfig from_gamma(double g) {
        if (g == 0.0) return {std::numeric_limits<double>::infinity()};
        return {1.0 / std::sqrt(g)};
    }
};

/// Componentwise normal prior with rejection bounds for sampling.
struct PriorConfig {
    Vec3 mean{0.4, 0.4, 3.4};
    Vec3 sigma{0.3, 0.4, 0.4};
    Vec3 lower{-0.2, -0.4, 2.0};
    Vec3 upper{1.0, 1.2, 5.0};

    /// Precision matrix L = Gamma_prior^-1 = diag(1/sigma_i^2).
    Mat3 precision() const {
        return Mat3::diag(1.0 / (sigma[0] * sigma[0]), 1.0 / (sigma[1] * sigma[1]),
                          1.0 / (sigma[2] * sigma[2]));
    }
    Mat3 covariance() const {
        return Mat3::diag(sigma[0] * sigma[0], sigma[1] * sigma[1], sigma[2] * sigma[2]);
    }
};

namespace detail {

constexpr double kBlowupGuard = 1e6;

// du/dt and dv/dt of the FitzHugh-Nagumo system.
inline void fhn_rhs(const DynParams& p, double z, double u, double v, double& fu, double& fv) {
    fu = p.theta2 * (u - u * u * u / 3.0 + v + z);
    fv = -(u - p.theta0 + p.theta1 * v) / p.theta2;
}

inline void check_finite(double u, double v, std::size_t step) {
    if (!(std::fabs(u) <= kBlowupGuard) || !(std::fabs(v) <= kBlowupGuard))
        throw NonFiniteError(step);
}

} // namespace detail

/// Heun (explicit trapezoidal) integration of the FitzHugh-Nagumo system.
inline Trajectory simulate_fhn(const DynParams& params, const SimConfig& cfg) {
    cfg.validate();
    if (!(params.theta2 > 0.0)) throw ConfigError("DynParams: theta2 must be > 0");
    const double h = cfg.h_t();
    Trajectory traj;
    traj.u.resize(cfg.n_t + 1);
    traj.v.resize(cfg.n_t + 1);
    traj.u[0] = cfg.u0;
    traj.v[0] = cfg.v0;
    for (std::size_t j = 0; j < cfg.n_t; ++j) {
        double f1u, f1v, f2u, f2v;
        detail::fhn_rhs(params, cfg.z, traj.u[j], traj.v[j], f1u, f1v);
        double us = traj.u[j] + h * f1u;
        double vs = traj.v[j] + h * f1v;
        detail::fhn_rhs(params, cfg.z, us, vs, f2u, f2v);
        traj.u[j + 1] = traj.u[j] + 0.5 * h * (f1u + f2u);
        traj.v[j + 1] = traj.v[j] + 0.5 * h * (f1v + f2v);
        detail::check_finite(traj.u[j + 1], traj.v[j + 1], j + 1);
    }
    return traj;
}

/// Observation operator: the membrane potential u sampled at t_1..t_{n_t}.
inline std::vector<double> observe_u(const Trajectory& traj) {
    return std::vector<double>(traj.u.begin() + 1, traj.u.end());
}

/// Parameter-to-observation map f = o . e (noise-free).
inline std::vector<double> parameter_to_observation(const DynParams& params, const SimConfig& cfg) {
    return observe_u(simulate_fhn(params, cfg));
}

/// Negative log posterior
///   phi(theta) = gamma*h_t/2 * sum_j (f_j - y_j)^2 + 1/2 |theta - mean|^2_L,
/// the h_t-weighted quadrature of the continuous misfit integral.
inline double neg_log_posterior(const DynParams& params, const std::vector<double>& y_obs,
                                const LikelihoodConfig& like, const PriorConfig& prior,
                                const SimConfig& cfg) {
    if (y_obs.size() != cfg.n_t) throw ShapeMismatchError("y_obs length must equal n_t");
    Trajectory traj = simulate_fhn(params, cfg);
    double misfit = 0.0;
    for (std::size_t j = 1; j <= cfg.n_t; ++j) {
        double r = traj.u[j] - y_obs[j - 1];
        misfit += r * r;
    }
    Vec3 d = params.as_vec();
    for (std::size_t i = 0; i < 3; ++i) d[i] -= prior.mean[i];
    Mat3 L = prior.precision();
    return 0.5 * like.gamma() * cfg.h_t() * misfit + 0.5 * dot(d, L * d);
}

} // namespace fhn
