// Copyright 2026 The mapprior Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace mapprior {

    constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    /// Mixes a seed with a stream tag so independent consumers never share a sequence.
    constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
        return splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
    }

    /// Stateless uniform in [0,1) addressed by (seed, counter).
    inline double counter_uniform(std::uint64_t seed, std::uint64_t counter) noexcept {
        return static_cast<double>(splitmix64(seed + splitmix64(counter)) >> 11) * 0x1.0p-53;
    }

    /// Sequential generator. The distributions are written out by hand so draws are identical
    /// across standard library implementations.
    class Rng {
    public:
        explicit Rng(std::uint64_t seed) : engine_(seed) {}

        std::uint64_t next_u64() { return engine_(); }

        double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

        double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

        /// Uniform integer in [0, n).
        std::uint64_t uniform_index(std::uint64_t n) {
            const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
            std::uint64_t x = engine_();
            while (x >= limit) {
                x = engine_();
            }
            return x % n;
        }

        bool bernoulli(double p) { return uniform() < p; }

        double normal() {
            if (has_spare_) {
                has_spare_ = false;
                return spare_;
            }
            double u1 = uniform();
            while (u1 <= 0.0) {
                u1 = uniform();
            }
            const double u2 = uniform();
            const double r = std::sqrt(-2.0 * std::log(u1));
            spare_ = r * std::sin(2.0 * std::numbers::pi * u2);
            has_spare_ = true;
            return r * std::cos(2.0 * std::numbers::pi * u2);
        }

        double normal(double mean, double sigma) { return mean + sigma * normal(); }

    private:
        std::mt19937_64 engine_;
        double spare_ = 0.0;
        bool has_spare_ = false;
    };

} // namespace mapprior
