#pragma once

#include "semapop/types.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace semapop {

// Deterministic RNG used everywhere seeds appear in the public API.
// `derive` mixes a base seed with a tag so that independent consumers of
// one experiment seed draw from decorrelated streams regardless of call
// order.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    static std::uint64_t derive(std::uint64_t seed, std::string_view tag, std::uint64_t salt = 0) {
        std::uint64_t h = 0xcbf29ce484222325ULL ^ seed;
        for (unsigned char c : tag) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= salt + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
        // splitmix64 finalizer
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebULL;
        h ^= h >> 31;
        return h;
    }

    std::mt19937_64& engine() { return engine_; }

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }

    // Index in [0, n).
    Index uniform_index(Index n) {
        return std::uniform_int_distribution<Index>(0, n - 1)(engine_);
    }

    Matrix normal_matrix(Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = normal();
        return m;
    }

    Matrix uniform_matrix(Index rows, Index cols) {
        Matrix m(rows, cols);
        for (Index i = 0; i < rows; ++i)
            for (Index j = 0; j < cols; ++j) m(i, j) = uniform();
        return m;
    }

    // Fisher-Yates shuffle, stable across platforms.
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(uniform_index(static_cast<Index>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 engine_;
};

// round-half-away-from-zero, used for stratum and subgroup sizes
inline long long round_half_away(double x) {
    return static_cast<long long>(x < 0 ? x - 0.5 : x + 0.5);
}

} // namespace semapop
