#include "rgsym/rng.hpp"

#include <cmath>
#include <numbers>

namespace rgsym {

namespace {
constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
}

std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += kGolden;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

CounterRng::CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
    : key_(splitmix64(seed) ^ splitmix64(splitmix64(stream * kGolden + 1))) {}

std::uint64_t CounterRng::next_u64() noexcept {
    return splitmix64(key_ + (counter_++) * kGolden);
}

double CounterRng::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double CounterRng::normal() noexcept {
    if (has_cached_) {
        has_cached_ = false;
        return cached_normal_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    cached_normal_ = r * std::sin(theta);
    has_cached_ = true;
    return r * std::cos(theta);
}

std::uint64_t CounterRng::below(std::uint64_t bound) noexcept {
    if (bound <= 1) return 0;
    const std::uint64_t limit = (~std::uint64_t{0}) - (~std::uint64_t{0}) % bound;
    std::uint64_t x = next_u64();
    while (x >= limit) x = next_u64();
    return x % bound;
}

std::uint64_t stream_id(std::string_view label) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : label) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    return h;
}

std::uint64_t stream_id(std::string_view label, std::uint64_t a, std::uint64_t b) noexcept {
    return splitmix64(stream_id(label) ^ splitmix64(a ^ splitmix64(b + kGolden)));
}

}  // namespace rgsym
