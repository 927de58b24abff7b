#include "rdml/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include "rdml/error.hpp"

namespace rdml {
namespace {

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

std::uint64_t mix64(std::uint64_t z) noexcept {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

std::uint64_t fnv1a(std::string_view s) noexcept {
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001B3ULL;
    }
    return h;
}

}  // namespace

Rng::Rng(std::uint64_t seed) noexcept : key_(mix64(seed + kGolden)) {}

Rng Rng::derive(std::string_view purpose, std::uint64_t index) const noexcept {
    const std::uint64_t tag = mix64(fnv1a(purpose) ^ mix64(index + kGolden));
    return Rng(mix64(key_ ^ tag), 0);
}

std::uint64_t Rng::next_u64() noexcept {
    ++counter_;
    return mix64(key_ + counter_ * kGolden);
}

double Rng::uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::size_t Rng::below(std::size_t n) noexcept {
    // Lemire's multiply-shift with rejection for an unbiased draw.
    const std::uint64_t range = n;
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * range;
    std::uint64_t low = static_cast<std::uint64_t>(m);
    if (low < range) {
        const std::uint64_t threshold = (0 - range) % range;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * range;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::size_t>(m >> 64);
}

double Rng::normal() noexcept {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gamma(double shape) {
    require(shape > 0.0 && std::isfinite(shape), ErrorKind::InvalidArgument,
            "gamma shape must be positive, got " + std::to_string(shape));
    if (shape < 1.0) {
        // Boost: Gamma(a) = Gamma(a + 1) * U^(1/a).
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x = 0.0;
        double v = 0.0;
        do {
            x = normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<std::size_t> Rng::permutation(std::size_t n) noexcept {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    shuffle(p);
    return p;
}

double sample_beta(Rng& rng, double alpha) {
    require(alpha > 0.0 && std::isfinite(alpha), ErrorKind::InvalidArgument,
            "Beta parameter alpha must be positive, got " + std::to_string(alpha));
    for (;;) {
        const double x = rng.gamma(alpha);
        const double y = rng.gamma(alpha);
        const double s = x + y;
        if (s <= 0.0) continue;
        const double b = x / s;
        if (b > 0.0 && b < 1.0) return b;
    }
}

}  // namespace rdml
