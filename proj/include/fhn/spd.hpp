#pragma once

// Log-Euclidean machinery on SPD(3): matrix log/exp at the identity, the
// norm-preserving vec/devec packing into R^6, and nearest-SPD repair for raw
// covariance predictions.

#include <array>
#include <cmath>
#include <cstddef>

#include "fhn/errors.hpp"
#include "fhn/linalg.hpp"

namespace fhn {

/// Norm-preserving packing of a symmetric 3x3 matrix:
/// (w00, sqrt2*w01, sqrt2*w02, w11, sqrt2*w12, w22), so that
/// |vec(W)|_2 = |W|_F.
using TangentVec = std::array<double, 6>;

/// Riemannian logarithm at Sigma = Id: U diag(ln s_i) U^T.
inline Mat3 log_at_identity(const Mat3& sigma) {
    EigenSym3 eig = eigen_sym3(sigma);
    double scale = std::fabs(eig.values[2]);
    if (!(eig.values[0] > 0.0) || eig.values[0] <= 1e-12 * scale)
        throw NotSpdError("log_at_identity: eigenvalue <= 0");
    Vec3 logs{std::log(eig.values[0]), std::log(eig.values[1]), std::log(eig.values[2])};
    return compose_sym3(eig.vectors, logs);
}

/// Riemannian exponential at Sigma = Id: U diag(exp s_i) U^T; SPD by construction.
inline Mat3 exp_at_identity(const Mat3& w) {
    EigenSym3 eig = eigen_sym3(w);
    Vec3 exps{std::exp(eig.values[0]), std::exp(eig.values[1]), std::exp(eig.values[2])};
    return compose_sym3(eig.vectors, exps);
}

inline TangentVec vec(const Mat3& w) {
    const double r2 = std::sqrt(2.0);
    return {w(0, 0), r2 * w(0, 1), r2 * w(0, 2), w(1, 1), r2 * w(1, 2), w(2, 2)};
}

inline Mat3 devec(const TangentVec& t) {
    const double inv_r2 = 1.0 / std::sqrt(2.0);
    Mat3 w;
    w(0, 0) = t[0];
    w(0, 1) = w(1, 0) = t[1] * inv_r2;
    w(0, 2) = w(2, 0) = t[2] * inv_r2;
    w(1, 1) = t[3];
    w(1, 2) = w(2, 1) = t[4] * inv_r2;
    w(2, 2) = t[5];
    return w;
}

/// Nearest-SPD repair: symmetrize, average with the symmetric polar factor,
/// then add scaled identity shifts (growing quadratically) until positive
/// definite. For an already-SPD input this is the identity map.
inline Mat3 nearest_spd(const Mat3& m) {
    Mat3 b = symmetrize(m);
    EigenSym3 eig = eigen_sym3(b);
    // For a symmetric matrix the SVD-derived polar factor is U |S| U^T.
    Vec3 abs_vals{std::fabs(eig.values[0]), std::fabs(eig.values[1]), std::fabs(eig.values[2])};
    Mat3 polar = compose_sym3(eig.vectors, abs_vals);
    Mat3 a = symmetrize(0.5 * (b + polar));
    double spacing = 2.220446049250313e-16 * frobenius_norm(b);
    if (spacing == 0.0) spacing = 2.220446049250313e-16;
    for (int k = 1; k <= 100; ++k) {
        EigenSym3 e = eigen_sym3(a);
        if (e.values[0] > 0.0) return a;
        double shift = -e.values[0] * static_cast<double>(k) * static_cast<double>(k) + spacing;
        a(0, 0) += shift;
        a(1, 1) += shift;
        a(2, 2) += shift;
    }
    throw BugError("nearest_spd: did not reach positive definiteness in 100 iterations");
}

} // namespace fhn
