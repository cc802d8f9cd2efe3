#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace spectral {

// Counter-free generator with explicit state so checkpoints can freeze and
// restore the exact position of every stream.  Core is xoshiro256++ seeded
// through splitmix64; normals use Box-Muller on two fresh uniforms per call,
// which keeps the state a plain array of four words.
class RngStream {
public:
    RngStream() : RngStream(0x9e3779b97f4a7c15ULL) {}

    explicit RngStream(std::uint64_t seed, std::uint64_t stream = 0) {
        std::uint64_t x = seed ^ (0x632be59bd9b4e019ULL * (stream + 1));
        for (auto& word : state_) word = splitmix64(x);
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // Uniform on (0,1]; never returns 0 so it is safe under log().
    double uniform() {
        return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
    }

    double normal() {
        const double u1 = uniform();
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925286766559 * u2);
    }

    // Index in [0, n).
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // Derives an independent child stream; children of distinct ids never
    // collide with the parent because derivation reseeds through splitmix64.
    RngStream split(std::uint64_t child_id) const {
        RngStream out;
        std::uint64_t x = state_[0] ^ rotl(state_[2], 31) ^ (0xd1342543de82ef95ULL * (child_id + 1));
        for (auto& word : out.state_) word = splitmix64(x);
        return out;
    }

    std::array<std::uint64_t, 4> save_state() const { return state_; }
    void restore_state(const std::array<std::uint64_t, 4>& s) { state_ = s; }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    static std::uint64_t splitmix64(std::uint64_t& x) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    std::array<std::uint64_t, 4> state_{};
};

}  // namespace spectral
