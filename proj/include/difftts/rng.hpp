#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>

namespace difftts {

// Seeded random stream. All randomness in the project flows through this
// class so that checkpoints can capture and restore generator state exactly.
// Gaussian draws use Box-Muller on raw engine output instead of
// std::normal_distribution, which keeps hidden state out of the distribution
// object (the engine is the only state that needs serializing).
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int>(engine_() % span);
    }

    // standard normal via Box-Muller; consumes two engine draws per call
    double normal() {
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // derive an independent child stream (stage-local seeding)
    Rng fork(uint64_t salt) {
        uint64_t s = engine_();
        // splitmix-style mix of parent draw and salt
        uint64_t z = s + 0x9e3779b97f4a7c15ULL * (salt + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return Rng(z ^ (z >> 31));
    }

    std::string save_state() const;
    void load_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

// Stable seed derivation for independent component streams: mixes a base
// seed with a tag so the same (seed, tag) pair always yields the same
// stream regardless of construction order.
uint64_t derive_seed(uint64_t base, const std::string& tag);

}  // namespace difftts
