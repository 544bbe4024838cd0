#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace hcc {

/// ctr64 (version 1): a stateless counter-based generator.
///
/// Every draw is a pure function of (seed, stream, counter), which lets
/// parallel loops reproduce the serial draw sequence exactly. The output for
/// a key is
///
///     key  = mix64(seed + GOLDEN * (stream + 1))
///     out  = mix64(key  + GOLDEN * (counter + 1))
///
/// where mix64 is the SplitMix64 finalizer and GOLDEN = 0x9E3779B97F4A7C15.
/// Bounded integers use the high word of a 128-bit product (Lemire's
/// multiply-shift, bias < n / 2^64). Uniform reals take the top 53 bits.
/// Normals use Box-Muller on two consecutive counters.
class Ctr64 {
public:
    static constexpr std::uint64_t kVersion = 1;
    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

    static constexpr std::uint64_t mix64(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    constexpr Ctr64(std::uint64_t seed, std::uint64_t stream)
        : key_(mix64(seed + kGolden * (stream + 1))) {}

    constexpr std::uint64_t bits(std::uint64_t counter) const {
        return mix64(key_ + kGolden * (counter + 1));
    }

    std::uint64_t below(std::uint64_t counter, std::uint64_t n) const {
        const auto wide = static_cast<unsigned __int128>(bits(counter)) * n;
        return static_cast<std::uint64_t>(wide >> 64);
    }

    /// Uniform in [0, 1).
    double uniform(std::uint64_t counter) const {
        return static_cast<double>(bits(counter) >> 11) * 0x1.0p-53;
    }

    double uniform(std::uint64_t counter, double lo, double hi) const {
        return lo + (hi - lo) * uniform(counter);
    }

    /// Standard normal from counters (2k, 2k+1).
    double normal(std::uint64_t k) const {
        const double u1 = 1.0 - uniform(2 * k);  // (0, 1]
        const double u2 = uniform(2 * k + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
    }

private:
    std::uint64_t key_;
};

/// Derives a child seed from a parent seed and an index path.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0) {
    return Ctr64::mix64(Ctr64::mix64(seed ^ Ctr64::mix64(a + Ctr64::kGolden)) + b * Ctr64::kGolden);
}

/// Sequential convenience wrapper over Ctr64 for code that draws in order.
class Ctr64Stream {
public:
    Ctr64Stream(std::uint64_t seed, std::uint64_t stream) : gen_(seed, stream) {}

    double uniform() { return gen_.uniform(next_++); }
    double uniform(double lo, double hi) { return gen_.uniform(next_++, lo, hi); }
    std::uint64_t below(std::uint64_t n) { return gen_.below(next_++, n); }
    double normal() {
        // Normals consume an aligned counter pair.
        if (next_ % 2 != 0) ++next_;
        const double v = gen_.normal(next_ / 2);
        next_ += 2;
        return v;
    }

private:
    Ctr64 gen_;
    std::uint64_t next_ = 0;
};

}  // namespace hcc
