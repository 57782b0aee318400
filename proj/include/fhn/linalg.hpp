#pragma once

#include <array>
#include <cmath>
#include <cstddef>

#include "fhn/errors.hpp"

namespace fhn {

using Vec3 = std::array<double, 3>;

/// Dense 3x3 matrix, row-major. Small enough that everything is by value.
struct Mat3 {
    std::array<double, 9> a{};

    double& operator()(std::size_t i, std::size_t j) { return a[3 * i + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[3 * i + j]; }

    static Mat3 identity() {
        Mat3 m;
        m(0, 0) = m(1, 1) = m(2, 2) = 1.0;
        return m;
    }
    static Mat3 diag(double d0, double d1, double d2) {
        Mat3 m;
        m(0, 0) = d0;
        m(1, 1) = d1;
        m(2, 2) = d2;
        return m;
    }

    Mat3 transposed() const {
        Mat3 t;
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t j = 0; j < 3; ++j) t(i, j) = (*this)(j, i);
        return t;
    }
};

inline Mat3 operator+(const Mat3& x, const Mat3& y) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.a[i] = x.a[i] + y.a[i];
    return r;
}
inline Mat3 operator-(const Mat3& x, const Mat3& y) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.a[i] = x.a[i] - y.a[i];
    return r;
}
inline Mat3 operator*(double s, const Mat3& x) {
    Mat3 r;
    for (std::size_t i = 0; i < 9; ++i) r.a[i] = s * x.a[i];
    return r;
}
inline Mat3 operator*(const Mat3& x, const Mat3& y) {
    Mat3 r;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) s += x(i, k) * y(k, j);
            r(i, j) = s;
        }
    return r;
}
inline Vec3 operator*(const Mat3& m, const Vec3& v) {
    Vec3 r{};
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) r[i] += m(i, j) * v[j];
    return r;
}

inline double dot(const Vec3& x, const Vec3& y) { return x[0] * y[0] + x[1] * y[1] + x[2] * y[2]; }
inline double norm(const Vec3& x) { return std::sqrt(dot(x, x)); }

inline double frobenius_norm(const Mat3& m) {
    double s = 0.0;
    for (double e : m.a) s += e * e;
    return std::sqrt(s);
}

inline Mat3 symmetrize(const Mat3& m) { return 0.5 * (m + m.transposed()); }

inline bool all_finite(const Mat3& m) {
    for (double e : m.a)
        if (!std::isfinite(e)) return false;
    return true;
}

struct EigenSym3 {
    Vec3 values;   // ascending
    Mat3 vectors;  // columns are eigenvectors, matching `values`
};

/// Eigendecomposition of a symmetric 3x3 by cyclic Jacobi rotations.
/// Quadratically convergent; iterated until the off-diagonal mass is at
/// rounding level, so reconstruction errors stay near machine precision.
inline EigenSym3 eigen_sym3(const Mat3& input) {
    Mat3 a = symmetrize(input);
    Mat3 q = Mat3::identity();
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::fabs(a(0, 1)) + std::fabs(a(0, 2)) + std::fabs(a(1, 2));
        double dia = std::fabs(a(0, 0)) + std::fabs(a(1, 1)) + std::fabs(a(2, 2));
        if (off <= 1e-15 * dia || off == 0.0) break;
        for (std::size_t p = 0; p < 2; ++p) {
            for (std::size_t r = p + 1; r < 3; ++r) {
                if (a(p, r) == 0.0) continue;
                double theta = 0.5 * (a(r, r) - a(p, p)) / a(p, r);
                double t = (theta >= 0.0 ? 1.0 : -1.0) /
                           (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0);
                double s = t * c;
                double app = a(p, p), arr = a(r, r), apr = a(p, r);
                a(p, p) = app - t * apr;
                a(r, r) = arr + t * apr;
                a(p, r) = a(r, p) = 0.0;
                for (std::size_t k = 0; k < 3; ++k) {
                    if (k != p && k != r) {
                        double akp = a(k, p), akr = a(k, r);
                        a(k, p) = a(p, k) = c * akp - s * akr;
                        a(k, r) = a(r, k) = s * akp + c * akr;
                    }
                    double qkp = q(k, p), qkr = q(k, r);
                    q(k, p) = c * qkp - s * qkr;
                    q(k, r) = s * qkp + c * qkr;
                }
            }
        }
    }
    // sort ascending, permuting eigenvector columns along
    std::array<std::size_t, 3> idx{0, 1, 2};
    for (std::size_t i = 0; i < 2; ++i)
        for (std::size_t j = i + 1; j < 3; ++j)
            if (a(idx[j], idx[j]) < a(idx[i], idx[i])) std::swap(idx[i], idx[j]);
    EigenSym3 out;
    for (std::size_t j = 0; j < 3; ++j) {
        out.values[j] = a(idx[j], idx[j]);
        for (std::size_t i = 0; i < 3; ++i) out.vectors(i, j) = q(i, idx[j]);
    }
    return out;
}

/// Rebuild V * diag(d) * V^T; result is symmetrized exactly.
inline Mat3 compose_sym3(const Mat3& vectors, const Vec3& d) {
    Mat3 m;
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = i; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 3; ++k) s += vectors(i, k) * d[k] * vectors(j, k);
            m(i, j) = m(j, i) = s;
        }
    return m;
}

/// Direct 3x3 inverse via the adjugate.
inline Mat3 inverse3(const Mat3& m) {
    Mat3 inv;
    inv(0, 0) = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
    inv(0, 1) = m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2);
    inv(0, 2) = m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1);
    inv(1, 0) = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
    inv(1, 1) = m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0);
    inv(1, 2) = m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2);
    inv(2, 0) = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
    inv(2, 1) = m(0, 1) * m(2, 0) - m(0, 0) * m(2, 1);
    inv(2, 2) = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
    double det = m(0, 0) * inv(0, 0) + m(0, 1) * inv(1, 0) + m(0, 2) * inv(2, 0);
    if (det == 0.0 || !std::isfinite(det)) throw NotSpdError("singular matrix in inverse3");
    return (1.0 / det) * inv;
}

} // namespace fhn
