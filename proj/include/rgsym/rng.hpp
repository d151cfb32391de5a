#pragma once

#include <cstdint>
#include <string_view>

namespace rgsym {

/// Counter-based 64-bit generator.
///
/// Each draw is a pure function of (seed, stream, counter): the key is
/// splitmix64(seed) xor splitmix64(stream * golden), and draw i returns
/// splitmix64 finalisation of key + i * golden. Streams with different ids
/// are statistically independent and the sequence is identical on every
/// platform, which `std::mt19937` + `<random>` distributions do not guarantee.
class CounterRng {
  public:
    CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept;

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Standard normal via Box-Muller; caches the second variate.
    double normal() noexcept;
    double normal(double mean, double sd) noexcept { return mean + sd * normal(); }
    /// Uniform integer in [0, bound) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t bound) noexcept;

    std::uint64_t counter() const noexcept { return counter_; }

  private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x) noexcept;

/// Stable 64-bit FNV-1a hash, used to derive stream ids from labels.
std::uint64_t stream_id(std::string_view label) noexcept;

/// Combines a stream id with integer coordinates (step index, variance slot...).
std::uint64_t stream_id(std::string_view label, std::uint64_t a, std::uint64_t b = 0) noexcept;

}  // namespace rgsym
