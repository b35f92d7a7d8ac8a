#pragma once

#include <cstdint>

namespace gdcm {

/// Counter-based random source.
///
/// A KeyedRng is an immutable key. Draws are pure functions of (key, counter),
/// and child streams are derived by hashing an identifier into the key, so a
/// draw addressed as (seed, subject, sweep, item) is the same no matter which
/// thread computes it or in what order.
class KeyedRng {
public:
    explicit constexpr KeyedRng(std::uint64_t seed) noexcept : key_(mix(seed ^ kSeedSalt)) {}

    constexpr KeyedRng derive(std::uint64_t id) const noexcept {
        KeyedRng child{};
        child.key_ = mix(key_ ^ mix(id * kGolden + kStreamSalt));
        return child;
    }

    constexpr std::uint64_t bits(std::uint64_t counter) const noexcept {
        return mix(key_ + (counter + 1) * kGolden);
    }

    /// Uniform on the open interval (0, 1).
    constexpr double uniform(std::uint64_t counter) const noexcept {
        return (static_cast<double>(bits(counter) >> 11) + 0.5) * 0x1.0p-53;
    }

    constexpr std::uint64_t key() const noexcept { return key_; }

private:
    constexpr KeyedRng() noexcept = default;

    // splitmix64 finalizer
    static constexpr std::uint64_t mix(std::uint64_t z) noexcept {
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    static constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;
    static constexpr std::uint64_t kSeedSalt = 0x6A09E667F3BCC908ULL;
    static constexpr std::uint64_t kStreamSalt = 0xD1B54A32D192ED03ULL;

    std::uint64_t key_ = 0;
};

}  // namespace gdcm
