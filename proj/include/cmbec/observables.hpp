#ifndef CMBEC_OBSERVABLES_HPP
#define CMBEC_OBSERVABLES_HPP

#include <cmath>
#include <stdexcept>
#include <vector>

#include "cmbec/lattice.hpp"
#include "cmbec/meanfield.hpp"
#include "cmbec/positivep.hpp"

namespace cmbec {

// Atom density per unit length, n(x_i) = Re<beta_i alpha_i> / dx.
struct DensityProfile {
    std::vector<double> x;
    std::vector<double> n;
    std::vector<double> stderr_n;
};

inline DensityProfile density_profile(const EnsembleAccumulator& acc, const Lattice& lattice) {
    if (acc.count < 1) throw std::invalid_argument("density_profile: empty accumulator");
    if (acc.m_cells != lattice.m_cells)
        throw std::invalid_argument("density_profile: lattice mismatch");
    DensityProfile p;
    p.x = lattice.positions;
    p.n.resize(p.x.size());
    p.stderr_n.resize(p.x.size());
    for (int i = 0; i < lattice.m_cells; ++i) {
        p.n[static_cast<std::size_t>(i)] = acc.mean_nr(i) / lattice.dx;
        p.stderr_n[static_cast<std::size_t>(i)] = acc.stderr_nr(i) / lattice.dx;
    }
    return p;
}

struct ValueWithError {
    double value = 0.0;
    double stderr_v = 0.0;
};

// Variance of the density profile, sum x^2 n dx / N - (sum x n dx / N)^2.
// The error estimate propagates the accumulator's trajectory-level spread of
// the weighted sums (the first term dominates; the center-of-mass term is
// included via the delta method with covariances dropped).
inline ValueWithError cloud_variance(const EnsembleAccumulator& acc) {
    if (acc.count < 1) throw std::invalid_argument("cloud_variance: empty accumulator");
    const double n_total = acc.total_number();
    if (!(n_total > 0.0)) throw std::invalid_argument("cloud_variance: nonpositive total number");
    const double m1 = EnsembleAccumulator::mean_of(acc.sum_x1, acc.count) / n_total;
    const double m2 = EnsembleAccumulator::mean_of(acc.sum_x2, acc.count) / n_total;
    const double s1 = EnsembleAccumulator::stderr_of(acc.sum_x1, acc.sum_x12, acc.count) / n_total;
    const double s2 = EnsembleAccumulator::stderr_of(acc.sum_x2, acc.sum_x22, acc.count) / n_total;
    ValueWithError v;
    v.value = m2 - m1 * m1;
    v.stderr_v = std::sqrt(s2 * s2 + 4.0 * m1 * m1 * s1 * s1);
    return v;
}

// Density-density correlation between the trap center and cell i:
//   g2(x_i) = Re<b_c b_i a_i a_c> / (Re<b_c a_c> Re<b_i a_i>).
// Cells whose mean density falls below density_floor * max density are
// masked: the quotient of two tiny noisy numbers carries no information.
struct G2Curve {
    std::vector<double> x;
    std::vector<double> g2;
    std::vector<double> stderr_g2;
    std::vector<bool> valid;
};

inline G2Curve g2_curve(const EnsembleAccumulator& acc, const Lattice& lattice,
                        double density_floor = 1e-3) {
    if (acc.count < 1) throw std::invalid_argument("g2_curve: empty accumulator");
    if (!lattice.has_center_cell())
        throw std::invalid_argument("g2_curve: center cell undefined, odd m_cells required");
    if (!(density_floor > 0.0)) throw std::invalid_argument("g2_curve: density_floor must be positive");
    const int m = lattice.m_cells;
    const int c = lattice.center_cell();

    double n_max = 0.0;
    for (int i = 0; i < m; ++i) n_max = std::max(n_max, acc.mean_nr(i));
    const double floor_abs = density_floor * n_max;
    if (acc.mean_nr(c) < floor_abs)
        throw std::runtime_error("g2_curve: center-cell density below the validity floor");

    G2Curve out;
    out.x = lattice.positions;
    out.g2.assign(static_cast<std::size_t>(m), 0.0);
    out.stderr_g2.assign(static_cast<std::size_t>(m), 0.0);
    out.valid.assign(static_cast<std::size_t>(m), false);
    const double nc = acc.mean_nr(c);
    const double snc = acc.stderr_nr(c);
    for (int i = 0; i < m; ++i) {
        const double ni = acc.mean_nr(i);
        if (ni < floor_abs) continue;
        const double q = acc.mean_qr(i);
        const double sq = acc.stderr_qr(i);
        const double sni = acc.stderr_nr(i);
        const double denom = nc * ni;
        const double g2 = q / denom;
        const double e_q = sq / denom;
        const double e_nc = g2 * snc / nc;
        const double e_ni = g2 * sni / ni;
        out.g2[static_cast<std::size_t>(i)] = g2;
        out.stderr_g2[static_cast<std::size_t>(i)] = std::sqrt(e_q * e_q + e_nc * e_nc + e_ni * e_ni);
        out.valid[static_cast<std::size_t>(i)] = true;
    }
    return out;
}

// Relative spreading from two measured variances, with the sampling error
// propagated through eta = 1 - sqrt(v_nomeas / v_meas).
inline ValueWithError eta_from_runs(const ValueWithError& var_meas, const ValueWithError& var_nomeas) {
    ValueWithError out;
    out.value = relative_spreading(var_meas.value, var_nomeas.value);
    const double dm = 0.5 * std::sqrt(var_nomeas.value) / std::pow(var_meas.value, 1.5);
    const double dn = -0.5 / std::sqrt(var_nomeas.value * var_meas.value);
    out.stderr_v = std::sqrt(dm * dm * var_meas.stderr_v * var_meas.stderr_v +
                             dn * dn * var_nomeas.stderr_v * var_nomeas.stderr_v);
    return out;
}

}  // namespace cmbec

#endif
