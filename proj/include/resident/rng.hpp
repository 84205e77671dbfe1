#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace resident {

// Seeded random stream. mt19937_64 output is fully specified by the
// standard; the value transforms below are our own, so a given seed yields
// the same draws on every platform (std::*_distribution would not).
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    bool bernoulli(double p) { return uniform() < p; }

    // uniform integer in [0, n), rejection sampled to stay unbiased
    std::uint64_t below(std::uint64_t n) {
        if (n <= 1) return 0;
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return x % n;
    }

    // Fisher-Yates; used instead of std::shuffle for reproducibility
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // independent substream (distinct state, deterministic derivation)
    Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ULL); }

  private:
    std::mt19937_64 engine_;
};

}  // namespace resident
