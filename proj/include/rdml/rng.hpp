#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <utility>
#include <vector>

namespace rdml {

/// Counter-based generator: draw n of a stream keyed by `key` is mix(key, n).
/// Sub-streams are derived by hashing a purpose tag and index into a new key,
/// so adding a consumer never perturbs another consumer's draws. All
/// distributions are implemented here rather than via <random> so sample
/// streams are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) noexcept;

    Rng derive(std::string_view purpose, std::uint64_t index = 0) const noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    std::uint64_t next_u64() noexcept;
    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n); n must be > 0.
    std::size_t below(std::size_t n) noexcept;
    double normal() noexcept;
    double normal(double mean, double stddev) noexcept { return mean + stddev * normal(); }
    /// Gamma(shape, 1) by Marsaglia-Tsang; shape must be > 0.
    double gamma(double shape);

    template <class T>
    void shuffle(std::vector<T>& v) noexcept {
        for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
    }

    std::vector<std::size_t> permutation(std::size_t n) noexcept;

private:
    Rng(std::uint64_t key, std::uint64_t counter) noexcept : key_(key), counter_(counter) {}

    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

/// Beta(alpha, alpha) draw through two Gamma variates; alpha must be > 0.
double sample_beta(Rng& rng, double alpha);

}  // namespace rdml
