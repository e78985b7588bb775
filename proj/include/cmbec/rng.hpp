#ifndef CMBEC_RNG_HPP
#define CMBEC_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace cmbec {

// splitmix64: mixes (master seed, stream index) into a well-separated 64-bit
// seed per stream. Used to derive one independent generator per trajectory so
// that results do not depend on how trajectories are distributed over workers.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Standard-normal stream with a deterministic draw pattern.
//
// Gaussians come from the basic (trigonometric) Box-Muller transform: exactly
// two uniforms are consumed per generated pair, with no rejection step and no
// inverse-CDF evaluation, so the number of raw engine calls per trajectory is
// a fixed function of the step count. That makes seed -> trajectory replay
// bit-exact and independent of platform library details.
class GaussianStream {
public:
    explicit GaussianStream(std::uint64_t seed) : eng_(seed) {}

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        // u1 in (0,1], u2 in [0,1)
        const double u1 = (static_cast<double>(eng_() >> 11) + 1.0) * 0x1.0p-53;
        const double u2 = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

inline GaussianStream trajectory_stream(std::uint64_t master_seed, std::uint64_t trajectory_index) {
    return GaussianStream(splitmix64(master_seed ^ splitmix64(trajectory_index)));
}

}  // namespace cmbec

#endif
