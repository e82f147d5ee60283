#pragma once

#include <cstdint>

namespace offsetlab {

// splitmix64. Chosen over std::mt19937 etc. because the output sequence is
// trivially reproducible in any language, which keeps runs bit-identical
// across implementations.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) noexcept : state_(seed) {}

    uint64_t next_u64() noexcept {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with full 53-bit mantissa.
    double next_double() noexcept {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // Uniform in [lo, hi).
    double next_in(double lo, double hi) noexcept {
        return lo + (hi - lo) * next_double();
    }

private:
    uint64_t state_;
};

}  // namespace offsetlab
