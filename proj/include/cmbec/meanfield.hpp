#ifndef CMBEC_MEANFIELD_HPP
#define CMBEC_MEANFIELD_HPP

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmbec/gpe.hpp"
#include "cmbec/lattice.hpp"
#include "cmbec/params.hpp"

namespace cmbec {

// Second moments of the single-atom distribution for states with
// <x> = <p> = 0: position variance, momentum variance and the
// anticommutator covariance <{x,p}>.
struct MomentState {
    double var_x = 0.0;   // <dx^2>, a0^2
    double var_p = 0.0;   // <dp^2>, 1/a0^2
    double cov_xp = 0.0;  // <{x,p}>, dimensionless in internal units
};

inline void validate_initial_moments(const MomentState& s) {
    if (!(s.var_x > 0.0) || !(s.var_p > 0.0))
        throw std::invalid_argument("moments: variances must be positive");
    if (s.var_x * s.var_p < 0.25 - 1e-12)
        throw std::invalid_argument("moments: initial state violates var_x*var_p >= 1/4");
}

// Effective trap frequency squared. The mean-field interaction of a Gaussian
// cloud softens the bare trap:
//   Omega_eff^2 = omega0^2 - g1d N / (2 sqrt(pi) m var_x^{3/2}).
// May legitimately go negative (inverted effective potential); returned as-is.
inline double effective_frequency_sq(double var_x, const PhysicalParams& p) {
    if (!(var_x > 0.0)) throw std::invalid_argument("effective_frequency_sq: var_x must be positive");
    static const double two_sqrt_pi = 2.0 * std::sqrt(M_PI);
    return p.omega0 * p.omega0 -
           p.g1d_n() / (two_sqrt_pi * p.mass * var_x * std::sqrt(var_x));
}

// Coefficient choice for the restoring term in d<{x,p}>/dt. restoring_x4 is
// the closed moment system as published (default); restoring_x2 is the
// variant that reduces to the exact oscillator dynamics at g = 0.
enum class MomentForm { restoring_x4, restoring_x2 };

inline MomentState moment_rhs(const MomentState& s, const PhysicalParams& p,
                              MomentForm form = MomentForm::restoring_x4) {
    const double omega_sq = effective_frequency_sq(s.var_x, p);
    const double restoring = (form == MomentForm::restoring_x4) ? 4.0 : 2.0;
    MomentState d;
    d.var_x = s.cov_xp / p.mass;
    d.var_p = -p.mass * omega_sq * s.cov_xp + 2.0 * p.kappa_tilde;
    d.cov_xp = 2.0 * s.var_p / p.mass - restoring * p.mass * omega_sq * s.var_x;
    return d;
}

struct MomentSeries {
    std::vector<double> t;
    std::vector<MomentState> states;
    double min_omega_sq = 0.0;  // smallest Omega_eff^2 seen along the trajectory

    const MomentState& back() const { return states.back(); }
};

// Fixed-step 4th-order Adams-Bashforth-Moulton predictor-corrector (PECE),
// bootstrapped with three classical RK4 steps. Dense output at every step.
// Aborts with a diagnostic if var_x is driven to zero or below.
inline MomentSeries integrate_moments(const MomentState& initial, const PhysicalParams& p,
                                      double t_final, double dt,
                                      MomentForm form = MomentForm::restoring_x4) {
    if (!(dt > 0.0) || !(t_final > 0.0))
        throw std::invalid_argument("integrate_moments: dt and t_final must be positive");
    validate_initial_moments(initial);

    const long n_steps = std::max<long>(4, std::lround(t_final / dt));
    const double h = t_final / static_cast<double>(n_steps);

    MomentSeries out;
    out.t.reserve(static_cast<std::size_t>(n_steps) + 1);
    out.states.reserve(static_cast<std::size_t>(n_steps) + 1);
    out.t.push_back(0.0);
    out.states.push_back(initial);
    out.min_omega_sq = effective_frequency_sq(initial.var_x, p);

    auto add = [](const MomentState& a, double c, const MomentState& b) {
        return MomentState{a.var_x + c * b.var_x, a.var_p + c * b.var_p, a.cov_xp + c * b.cov_xp};
    };
    auto rhs = [&](const MomentState& s) {
        if (!(s.var_x > 0.0))
            throw std::runtime_error("integrate_moments: var_x reached " + std::to_string(s.var_x) +
                                     ", effective-frequency domain error");
        return moment_rhs(s, p, form);
    };

    std::vector<MomentState> f;  // derivative history, f[k] at step k
    f.reserve(static_cast<std::size_t>(n_steps) + 1);
    f.push_back(rhs(initial));

    MomentState y = initial;
    for (long k = 0; k < n_steps; ++k) {
        MomentState y_next;
        if (k < 3) {  // RK4 bootstrap
            const MomentState k1 = f.back();
            const MomentState k2 = rhs(add(y, 0.5 * h, k1));
            const MomentState k3 = rhs(add(y, 0.5 * h, k2));
            const MomentState k4 = rhs(add(y, h, k3));
            y_next = y;
            y_next.var_x += h / 6.0 * (k1.var_x + 2.0 * k2.var_x + 2.0 * k3.var_x + k4.var_x);
            y_next.var_p += h / 6.0 * (k1.var_p + 2.0 * k2.var_p + 2.0 * k3.var_p + k4.var_p);
            y_next.cov_xp += h / 6.0 * (k1.cov_xp + 2.0 * k2.cov_xp + 2.0 * k3.cov_xp + k4.cov_xp);
        } else {  // AB4 predict, AM4 correct, evaluate
            const std::size_t n = f.size() - 1;
            const MomentState &f0 = f[n], &f1 = f[n - 1], &f2 = f[n - 2], &f3 = f[n - 3];
            MomentState yp = y;
            yp.var_x += h / 24.0 * (55.0 * f0.var_x - 59.0 * f1.var_x + 37.0 * f2.var_x - 9.0 * f3.var_x);
            yp.var_p += h / 24.0 * (55.0 * f0.var_p - 59.0 * f1.var_p + 37.0 * f2.var_p - 9.0 * f3.var_p);
            yp.cov_xp += h / 24.0 * (55.0 * f0.cov_xp - 59.0 * f1.cov_xp + 37.0 * f2.cov_xp - 9.0 * f3.cov_xp);
            const MomentState fp = rhs(yp);
            y_next = y;
            y_next.var_x += h / 24.0 * (9.0 * fp.var_x + 19.0 * f0.var_x - 5.0 * f1.var_x + f2.var_x);
            y_next.var_p += h / 24.0 * (9.0 * fp.var_p + 19.0 * f0.var_p - 5.0 * f1.var_p + f2.var_p);
            y_next.cov_xp += h / 24.0 * (9.0 * fp.cov_xp + 19.0 * f0.cov_xp - 5.0 * f1.cov_xp + f2.cov_xp);
        }
        y = y_next;
        f.push_back(rhs(y));
        out.t.push_back(static_cast<double>(k + 1) * h);
        out.states.push_back(y);
        out.min_omega_sq = std::min(out.min_omega_sq, effective_frequency_sq(y.var_x, p));
    }
    return out;
}

// Relative spreading: (sqrt(v_meas) - sqrt(v_nomeas)) / sqrt(v_meas).
inline double relative_spreading(double var_x_meas, double var_x_nomeas) {
    if (!(var_x_meas > 0.0) || !(var_x_nomeas > 0.0))
        throw std::invalid_argument("relative_spreading: variances must be positive");
    const double sm = std::sqrt(var_x_meas);
    return (sm - std::sqrt(var_x_nomeas)) / sm;
}

struct EtaCell {
    double g1d_n = 0.0;
    double kappa_tilde = 0.0;
    double eta = 0.0;
    bool ok = false;              // integration completed
    bool within_validity = false; // Omega_eff^2 stayed positive (g1d N < 2 sqrt(pi) m w0^2 var_x^{3/2})
    std::string error;
};

struct EtaSweepOptions {
    int m_cells = 45;
    double dx = 0.33;
    double n_atoms = 100.0;
    double dt = 1e-4;
    MomentForm form = MomentForm::restoring_x4;
};

// Mean-field relative spreading over a (g1d N, kappa) grid, evaluated at
// t_eval. Initial data per column: var_x from the GPE ground state,
// var_p = 1/(4 var_x) (minimum-uncertainty Gaussian), cov_xp = 0; the
// no-measurement reference shares the same initial state. Failed cells are
// flagged and the sweep continues.
inline std::vector<EtaCell> eta_sweep(const std::vector<double>& g1dn_values,
                                      const std::vector<double>& kappa_values, double t_eval,
                                      const EtaSweepOptions& opts = {}) {
    if (!(t_eval > 0.0)) throw std::invalid_argument("eta_sweep: t_eval must be positive");
    const Lattice lat = build_lattice(opts.m_cells, opts.dx);
    std::vector<EtaCell> table;
    table.reserve(g1dn_values.size() * kappa_values.size());
    for (double gn : g1dn_values) {
        PhysicalParams p;
        p.n_atoms = opts.n_atoms;
        p.g1d = gn / opts.n_atoms;
        MomentState init;
        bool init_ok = true;
        std::string init_err;
        MomentSeries ref;
        try {
            const GroundState gs = solve_ground_state(lat, p);
            init.var_x = gs.variance;
            init.var_p = 0.25 / gs.variance;
            init.cov_xp = 0.0;
            p.kappa_tilde = 0.0;
            ref = integrate_moments(init, p, t_eval, opts.dt, opts.form);
        } catch (const std::exception& e) {
            init_ok = false;
            init_err = e.what();
        }
        for (double kappa : kappa_values) {
            EtaCell cell;
            cell.g1d_n = gn;
            cell.kappa_tilde = kappa;
            if (!init_ok) {
                cell.error = init_err;
                table.push_back(cell);
                continue;
            }
            try {
                p.kappa_tilde = kappa;
                const MomentSeries meas = integrate_moments(init, p, t_eval, opts.dt, opts.form);
                cell.eta = relative_spreading(meas.back().var_x, ref.back().var_x);
                cell.ok = true;
                cell.within_validity = meas.min_omega_sq > 0.0 && ref.min_omega_sq > 0.0;
            } catch (const std::exception& e) {
                cell.error = e.what();
            }
            table.push_back(cell);
        }
    }
    return table;
}

}  // namespace cmbec

#endif
