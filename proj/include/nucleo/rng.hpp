#pragma once

#include <cmath>
#include <cstdint>

namespace nucleo {

// SplitMix64 (Steele, Lea, Flood 2014). Chosen because the whole algorithm
// fits in a dozen lines and produces the same byte stream on every platform,
// which keeps seeded splits and patch draws reproducible across builds.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, n); rejection-free modulo, bias is irrelevant at these
    // range sizes and determinism is the contract
    std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

    // uniform in [0, 1)
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // standard normal via Box-Muller
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        const double u2 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    // independent stream for a sub-task
    Rng fork() { return Rng(next_u64()); }

  private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace nucleo
