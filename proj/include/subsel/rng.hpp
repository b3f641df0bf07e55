#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace subsel {

// Deterministic RNG. mt19937_64 is fully specified by the standard, and all
// transforms below are hand-rolled, so identical seeds give identical streams
// on any platform (std::*_distribution would not guarantee that).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed), seed_mix_(seed) {}

    // Derive an independent stream, e.g. per architecture or per stage.
    Rng fork(std::uint64_t salt) const {
        std::uint64_t x = seed_mix_ ^ (0x9e3779b97f4a7c15ULL + salt);
        x ^= x >> 30; x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27; x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return Rng(x, true);
    }

    std::uint64_t bits() { return gen_(); }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n));
    }

    // Standard normal via Box-Muller (no cached spare, keeps the stream simple).
    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Standard Gumbel: -ln(-ln U).
    double gumbel() {
        double u = uniform();
        while (u <= 0.0) u = uniform();
        return -std::log(-std::log(u));
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), uniform without replacement.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> all(n);
        for (std::size_t i = 0; i < n; ++i) all[i] = i;
        shuffle(all);
        all.resize(k);
        return all;
    }

private:
    Rng(std::uint64_t seed, bool) : gen_(seed), seed_mix_(seed) {}

    std::mt19937_64 gen_;
    std::uint64_t seed_mix_ = 0;
};

}  // namespace subsel
