#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "fhn/errors.hpp"
#include "fhn/ode.hpp"
#include "fhn/rng.hpp"

namespace fhn {

enum class NoiseKind { Additive, Intrinsic, Combined };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::Additive: return "additive";
        case NoiseKind::Intrinsic: return "intrinsic";
        case NoiseKind::Combined: return "combined";
    }
    return "?";
}

inline NoiseKind noise_kind_from_string(const std::string& s) {
    if (s == "additive") return NoiseKind::Additive;
    if (s == "intrinsic") return NoiseKind::Intrinsic;
    if (s == "combined") return NoiseKind::Combined;
    throw ConfigError("unknown noise kind: " + s);
}

/// Noise-model kind plus its parameters. rho/sigma drive the AR(1) additive
/// model, beta the SDE diffusion. Unused fields are zero.
struct NoiseSpec {
    NoiseKind kind = NoiseKind::Additive;
    double rho = 0.0;
    double sigma = 0.0;
    double beta = 0.0;
};

/// Truncation windows for the sampled noise parameters.
struct NoiseWindows {
    double rho_mean = 0.8, rho_sd = 0.05, rho_lo = 0.65, rho_hi = 0.95;
    double sigma_mean = 0.07, sigma_sd = 0.01, sigma_lo = 0.04, sigma_hi = 0.10;
    double beta_mean = 0.15, beta_sd = 0.05, beta_lo = 0.01, beta_hi = 0.27;
};

/// Draw noise parameters from their truncated normals. The Combined kind
/// halves sigma and beta so the combined signal-to-noise ratio stays
/// comparable to the single-model settings.
inline NoiseSpec sample_noise_params(NoiseKind kind, RngStream& rng,
                                     const NoiseWindows& w = {}) {
    NoiseSpec spec;
    spec.kind = kind;
    if (kind == NoiseKind::Additive || kind == NoiseKind::Combined) {
        spec.rho = rng.truncated_normal(w.rho_mean, w.rho_sd, w.rho_lo, w.rho_hi);
        spec.sigma = rng.truncated_normal(w.sigma_mean, w.sigma_sd, w.sigma_lo, w.sigma_hi);
    }
    if (kind == NoiseKind::Intrinsic || kind == NoiseKind::Combined) {
        spec.beta = rng.truncated_normal(w.beta_mean, w.beta_sd, w.beta_lo, w.beta_hi);
    }
    if (kind == NoiseKind::Combined) {
        spec.sigma *= 0.5;
        spec.beta *= 0.5;
    }
    return spec;
}

/// AR(1) observation noise on top of a clean series:
///   y_j = clean_j + eta_j,  eta_1 ~ N(0, sigma^2/h^2),
///   eta_j = rho*eta_{j-1} + eps_j,  eps_j ~ N(0, (1-rho^2) sigma^2/h^2).
inline std::vector<double> apply_additive_noise(const std::vector<double>& clean,
                                                const NoiseSpec& spec, double h_t,
                                                RngStream& rng) {
    if (!(std::fabs(spec.rho) < 1.0)) throw ConfigError("additive noise requires |rho| < 1");
    const double sd = spec.sigma / h_t;
    std::vector<double> out(clean.size());
    double eta = sd * rng.normal();
    if (!clean.empty()) out[0] = clean[0] + eta;
    const double eps_sd = std::sqrt(1.0 - spec.rho * spec.rho) * sd;
    for (std::size_t j = 1; j < clean.size(); ++j) {
        eta = spec.rho * eta + eps_sd * rng.normal();
        out[j] = clean[j] + eta;
    }
    return out;
}

/// Euler-Maruyama integration of the intrinsic-noise model with explicit
/// standard-normal increments (one per step): the u-equation becomes
/// dY = theta2 (Y - Y^3/3 + v + z) dt + beta dW, while v keeps its
/// deterministic equation and is advanced by explicit Euler each step.
/// Returns Y at t_1..t_{n_t}.
inline std::vector<double> simulate_intrinsic(const DynParams& params, const NoiseSpec& spec,
                                              const SimConfig& cfg,
                                              const std::vector<double>& increments) {
    cfg.validate();
    if (!(params.theta2 > 0.0)) throw ConfigError("DynParams: theta2 must be > 0");
    if (increments.size() != cfg.n_t)
        throw ConfigError("simulate_intrinsic: need one increment per step");
    const double h = cfg.h_t();
    const double root_h = std::sqrt(h);
    std::vector<double> out(cfg.n_t);
    double y = cfg.u0, v = cfg.v0;
    for (std::size_t j = 0; j < cfg.n_t; ++j) {
        double fu, fv;
        detail::fhn_rhs(params, cfg.z, y, v, fu, fv);
        y += h * fu + spec.beta * root_h * increments[j];
        v += h * fv;
        detail::check_finite(y, v, j + 1);
        out[j] = y;
    }
    return out;
}

inline std::vector<double> simulate_intrinsic(const DynParams& params, const NoiseSpec& spec,
                                              const SimConfig& cfg, RngStream& rng) {
    std::vector<double> increments(cfg.n_t);
    for (double& x : increments) x = rng.normal();
    return simulate_intrinsic(params, spec, cfg, increments);
}

/// Generate one noisy observation according to the spec's kind.
inline std::vector<double> make_observation(const DynParams& params, const NoiseSpec& spec,
                                            const SimConfig& cfg, RngStream& rng) {
    switch (spec.kind) {
        case NoiseKind::Additive:
            return apply_additive_noise(parameter_to_observation(params, cfg), spec, cfg.h_t(),
                                        rng);
        case NoiseKind::Intrinsic:
            return simulate_intrinsic(params, spec, cfg, rng);
        case NoiseKind::Combined: {
            std::vector<double> path = simulate_intrinsic(params, spec, cfg, rng);
            return apply_additive_noise(path, spec, cfg.h_t(), rng);
        }
    }
    throw BugError("unreachable noise kind");
}

} // namespace fhn
