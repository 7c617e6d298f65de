#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace qtomo {

/// Splittable, reproducible random stream: xoshiro256** seeded by running
/// splitmix64 over (seed, stream_id). Identical (seed, stream_id) pairs give
/// bit-identical draws on every platform.
class RngStream {
public:
    using result_type = std::uint64_t;

    static constexpr std::string_view kAlgorithm = "xoshiro256**/splitmix64-v1";

    RngStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return next(); }
    std::uint64_t next();

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform();
    /// Uniform double in [lo, hi).
    double uniform(double lo, double hi);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t s_[4];
};

}  // namespace qtomo
