#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace elm {

// Deterministic RNG with hand-rolled distributions. std::mt19937 is portable
// but the std distributions are implementation-defined, and several contracts
// here require bit-reproducible runs, so we own the whole path.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ull) {
        // Warm up so nearby seeds decorrelate.
        next_u64();
        next_u64();
    }

    // splitmix64
    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0); }

    // Uniform in [lo, hi).
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n). Rejection-free modulo bias is negligible for
    // our n (<< 2^32), but we use Lemire's method anyway.
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        while (true) {
            std::uint64_t x = next_u64();
            std::uint64_t lo = x % n;
            if (x - lo <= std::uint64_t(0) - n) return lo;
        }
    }

    int below_int(int n) { return static_cast<int>(below(static_cast<std::uint64_t>(n))); }

    // Standard normal via Box-Muller (no cached spare, keeps state linear).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // Partial Fisher-Yates: k distinct indices from [0, n), order random.
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
        if (k > n) k = n;
        std::vector<int> out;
        out.reserve(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            int j = i + below_int(n - i);
            std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
            out.push_back(pool[static_cast<std::size_t>(i)]);
        }
        return out;
    }

    // Derive an independent stream, e.g. one per client id.
    Rng fork(std::uint64_t tag) const {
        Rng r(state_ ^ (0xd1342543de82ef95ull * (tag + 1)));
        return r;
    }

  private:
    std::uint64_t state_;
};

}  // namespace elm
