// Deterministic random streams. xoshiro256++ with splitmix64 seeding; all
// distributions implemented here so results depend only on IEEE doubles,
// not on the standard library vendor.
#pragma once

#include <bit>
#include <cstdint>
#include <cmath>
#include <utility>
#include <vector>

namespace cwm {

inline uint64_t splitmix64(uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

class Rng {
public:
    explicit Rng(uint64_t seed = 0) {
        uint64_t sm = seed;
        for (auto& w : s_) w = splitmix64(sm);
    }

    uint64_t u64() {
        uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
        uint64_t t = s_[1] << 17;
        s_[2] ^= s_[0];
        s_[3] ^= s_[1];
        s_[1] ^= s_[2];
        s_[0] ^= s_[3];
        s_[2] ^= t;
        s_[3] = rotl(s_[3], 45);
        return result;
    }

    // [0, 1) with 53 bits of precision
    double uniform() { return static_cast<double>(u64() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // [0, n)
    uint64_t uniform_int(uint64_t n) {
        // rejection to avoid modulo bias
        uint64_t mask = ~0ULL >> std::countl_zero(n | 1);
        uint64_t v;
        do { v = u64() & mask; } while (v >= n);
        return v;
    }

    int index(size_t n) { return static_cast<int>(uniform_int(n)); }

    bool bernoulli(double p) { return uniform() < p; }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do { u1 = uniform(); } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }
    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // Independent child stream; distinct ids give decorrelated streams.
    Rng fork(uint64_t stream_id) const {
        uint64_t h = s_[0] ^ (0x9e3779b97f4a7c15ULL * (stream_id + 0x51eb851eb851eb85ULL));
        return Rng(h);
    }

private:
    static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
    uint64_t s_[4]{};
    double spare_ = 0.0;
    bool has_spare_ = false;
};

} // namespace cwm
