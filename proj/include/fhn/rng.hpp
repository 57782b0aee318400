#pragma once

#include <cmath>
#include <cstdint>

#include "fhn/errors.hpp"

namespace fhn {

/// Counter-based PCG32 stream. Distinct (seed, stream_id) pairs give
/// independent, reproducible sequences; the stream id selects the PCG
/// increment so per-sample streams can be spawned cheaply and in parallel.
class RngStream {
  public:
    RngStream(std::uint64_t seed, std::uint64_t stream_id)
        : state_(0), inc_((stream_id << 1u) | 1u) {
        next_u32();
        state_ += seed;
        next_u32();
    }

    std::uint32_t next_u32() {
        std::uint64_t old = state_;
        state_ = old * 6364136223846793005ULL + inc_;
        std::uint32_t xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
        std::uint32_t rot = static_cast<std::uint32_t>(old >> 59u);
        return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
    }

    /// Uniform in [0, 1) with full 53-bit mantissa.
    double uniform() {
        std::uint64_t hi = next_u32();
        std::uint64_t lo = next_u32();
        return static_cast<double>(((hi << 32) | lo) >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (two uniforms per draw, no cached spare).
    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    /// Rejection-sampled truncated normal; preserves the shape inside [lo, hi].
    double truncated_normal(double mean, double stddev, double lo, double hi) {
        for (int attempt = 0; attempt < 10000; ++attempt) {
            double x = normal(mean, stddev);
            if (x >= lo && x <= hi) return x;
        }
        throw BugError("truncated_normal: 1e4 consecutive rejections");
    }

  private:
    std::uint64_t state_;
    std::uint64_t inc_;
};

} // namespace fhn
