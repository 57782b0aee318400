#pragma once

// One-sided DFT feature packing. For a real series of even length n the
// packed layout is
//   [Re c_0, Re c_{n/2}, Re c_1, Im c_1, ..., Re c_{n/2-1}, Im c_{n/2-1}]
// which is exactly n reals and information-preserving (unnormalized DFT,
// c_k = sum_j x_j e^{-2 pi i j k / n}).

#include <cmath>
#include <cstddef>
#include <vector>

#include "fhn/errors.hpp"

namespace fhn {

inline std::vector<double> fourier_features(const std::vector<double>& ts) {
    const std::size_t n = ts.size();
    if (n == 0 || n % 2 != 0) throw ConfigError("fourier_features: length must be even");
    const std::size_t half = n / 2;
    // Twiddle table over the n distinct angles; index (j*k) mod n.
    std::vector<double> cos_t(n), sin_t(n);
    const double step = 2.0 * 3.141592653589793238462643383279502884 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        cos_t[i] = std::cos(step * static_cast<double>(i));
        sin_t[i] = std::sin(step * static_cast<double>(i));
    }
    std::vector<double> out(n);
    double dc = 0.0, nyq = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        dc += ts[j];
        nyq += (j % 2 == 0) ? ts[j] : -ts[j];
    }
    out[0] = dc;
    out[1] = nyq;
    for (std::size_t k = 1; k < half; ++k) {
        double re = 0.0, im = 0.0;
        std::size_t idx = 0;
        for (std::size_t j = 0; j < n; ++j) {
            re += ts[j] * cos_t[idx];
            im -= ts[j] * sin_t[idx];
            idx += k;
            if (idx >= n) idx -= n;
        }
        out[2 * k] = re;
        out[2 * k + 1] = im;
    }
    return out;
}

} // namespace fhn
