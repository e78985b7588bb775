#ifndef CMBEC_PARAMS_HPP
#define CMBEC_PARAMS_HPP

#include <stdexcept>

namespace cmbec {

// Internal units: hbar = m = omega0 = a0 = 1. Time is measured in units of
// T0/(2 pi), so a quarter trap period is t = pi/2.
struct PhysicalParams {
    double n_atoms = 100.0;     // N, atom number estimate
    double g1d = 0.0;           // 1D coupling, units hbar*omega0*a0, >= 0 (repulsive)
    double kappa_tilde = 0.0;   // kappa/N^2, measurement strength, units omega0/a0^2
    double omega0 = 1.0;        // trap frequency, fixed 1 in internal units
    double mass = 1.0;          // fixed 1 in internal units

    double g1d_n() const { return g1d * n_atoms; }  // reported interaction strength

    void validate() const {
        if (!(n_atoms > 0.0)) throw std::invalid_argument("params: n_atoms must be positive");
        if (g1d < 0.0) throw std::invalid_argument("params: g1d must be nonnegative (repulsive gas)");
        if (kappa_tilde < 0.0) throw std::invalid_argument("params: kappa_tilde must be nonnegative");
        if (!(omega0 > 0.0)) throw std::invalid_argument("params: omega0 must be positive");
        if (!(mass > 0.0)) throw std::invalid_argument("params: mass must be positive");
    }
};

// g1D = 2 a_s w_perp, the quasi-1D coupling from the s-wave scattering length
// (a_s in units a0, w_perp in units omega0).
inline double g1d_from_scattering(double a_s, double omega_perp) {
    if (!(omega_perp > 0.0))
        throw std::invalid_argument("g1d_from_scattering: omega_perp must be positive");
    return 2.0 * a_s * omega_perp;
}

}  // namespace cmbec

#endif
