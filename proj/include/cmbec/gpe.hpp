#ifndef CMBEC_GPE_HPP
#define CMBEC_GPE_HPP

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmbec/lattice.hpp"
#include "cmbec/params.hpp"

namespace cmbec {

// Stationary condensate wave function on the lattice, normalized as
// sum_i |phi(x_i)|^2 dx = N (phi carries units a0^{-1/2}).
struct GroundState {
    std::vector<double> amplitudes;   // phi(x_i), real and nonnegative
    double chemical_potential = 0.0;  // mu, units hbar*omega0
    double variance = 0.0;            // <dx^2>_0 of the density profile, units a0^2
};

struct GpeOptions {
    double dtau = 1e-3;          // imaginary-time step
    double mu_tol = 1e-10;       // stop when mu changes less than this between sweeps
    double residual_tol = 1e-8;  // max-norm of the stationary-equation residual
    long max_iterations = 2000000;
    bool check_coverage = true;  // Thomas-Fermi radius + 4 a0 must fit in the grid
    std::vector<double>* energy_trace = nullptr;  // optional per-iteration E[u] record
};

// Discrete energy functional in cell amplitudes, E[u] = u^T Upsilon u + (g/(2 dx)) sum u^4.
inline double gpe_energy(const Lattice& lattice, const PhysicalParams& params,
                         const std::vector<double>& cell_amplitudes) {
    const HoppingMatrix hop = hopping_matrix(lattice);
    std::vector<double> hu(cell_amplitudes.size());
    hop.apply(cell_amplitudes.data(), hu.data());
    double e = 0.0;
    const double half_g_over_dx = 0.5 * params.g1d / lattice.dx;
    for (std::size_t i = 0; i < cell_amplitudes.size(); ++i) {
        const double ui = cell_amplitudes[i];
        e += ui * hu[i] + half_g_over_dx * ui * ui * ui * ui;
    }
    return e;
}

// Ground state of the discrete Gross-Pitaevskii energy functional
//   E[u] = u^T Upsilon u + (g / (2 dx)) sum_i u_i^4,   sum_i u_i^2 = N,
// written in cell amplitudes u_i = phi(x_i) sqrt(dx). The stationary equation
//   (Upsilon u)_i + (g/dx) u_i^3 = mu u_i
// is the zero-noise fixed point of the phase-space drift, so the coherent
// state built from this solution stays put when both couplings vanish in the
// stochastic tier and rotates as exp(-i mu t) otherwise.
//
// Method: explicit imaginary-time propagation with renormalization to N after
// every step; converged when mu is stationary and the residual is below
// residual_tol in max norm.
inline GroundState solve_ground_state(const Lattice& lattice, const PhysicalParams& params,
                                      const GpeOptions& opts = {}) {
    params.validate();
    const int m = lattice.m_cells;
    const HoppingMatrix hop = hopping_matrix(lattice);
    const double g_over_dx = params.g1d / lattice.dx;
    const double n_atoms = params.n_atoms;

    // Gaussian seed with the bare-oscillator width
    std::vector<double> u(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) u[static_cast<std::size_t>(i)] = std::exp(-0.5 * lattice.positions[static_cast<std::size_t>(i)] * lattice.positions[static_cast<std::size_t>(i)]);
    double norm2 = 0.0;
    for (double v : u) norm2 += v * v;
    for (double& v : u) v *= std::sqrt(n_atoms / norm2);

    std::vector<double> hu(static_cast<std::size_t>(m));
    auto mu_of = [&](const std::vector<double>& w) {
        hop.apply(w.data(), hu.data());
        double e = 0.0;
        for (int i = 0; i < m; ++i) {
            const double wi = w[static_cast<std::size_t>(i)];
            e += wi * hu[static_cast<std::size_t>(i)] + g_over_dx * wi * wi * wi * wi;
        }
        return e / n_atoms;
    };

    double mu = mu_of(u);
    double residual = std::numeric_limits<double>::infinity();
    long iter = 0;
    for (; iter < opts.max_iterations; ++iter) {
        if (opts.energy_trace) opts.energy_trace->push_back(gpe_energy(lattice, params, u));
        hop.apply(u.data(), hu.data());
        double w2 = 0.0;
        for (int i = 0; i < m; ++i) {
            const double ui = u[static_cast<std::size_t>(i)];
            u[static_cast<std::size_t>(i)] = ui - opts.dtau * (hu[static_cast<std::size_t>(i)] + g_over_dx * ui * ui * ui);
            w2 += u[static_cast<std::size_t>(i)] * u[static_cast<std::size_t>(i)];
        }
        const double scale = std::sqrt(n_atoms / w2);
        for (double& v : u) v *= scale;

        const double mu_new = mu_of(u);
        const bool mu_settled = std::abs(mu_new - mu) < opts.mu_tol;
        mu = mu_new;
        if (mu_settled) {
            // hu currently holds Upsilon*u for the updated u (set inside mu_of)
            residual = 0.0;
            for (int i = 0; i < m; ++i) {
                const double ui = u[static_cast<std::size_t>(i)];
                residual = std::max(residual, std::abs(hu[static_cast<std::size_t>(i)] + g_over_dx * ui * ui * ui - mu * ui));
            }
            if (residual < opts.residual_tol) break;
        }
    }
    if (iter >= opts.max_iterations)
        throw std::runtime_error("solve_ground_state: no convergence after " +
                                 std::to_string(opts.max_iterations) + " iterations (residual " +
                                 std::to_string(residual) + ")");

    if (opts.check_coverage) {
        const double tf_radius = std::sqrt(std::max(0.0, 2.0 * mu));
        if (tf_radius + 4.0 > lattice.half_span())
            throw std::runtime_error("solve_ground_state: grid too small, cloud radius " +
                                     std::to_string(tf_radius) + " + 4 a0 exceeds half-span " +
                                     std::to_string(lattice.half_span()));
    }

    GroundState gs;
    gs.amplitudes.resize(static_cast<std::size_t>(m));
    const double inv_sqrt_dx = 1.0 / std::sqrt(lattice.dx);
    double first = 0.0, second = 0.0;
    for (int i = 0; i < m; ++i) {
        const double ui = std::abs(u[static_cast<std::size_t>(i)]);
        gs.amplitudes[static_cast<std::size_t>(i)] = ui * inv_sqrt_dx;
        const double x = lattice.positions[static_cast<std::size_t>(i)];
        first += x * ui * ui;
        second += x * x * ui * ui;
    }
    gs.chemical_potential = mu;
    gs.variance = second / n_atoms - (first / n_atoms) * (first / n_atoms);
    return gs;
}

// Density n(x_i) = |phi(x_i)|^2, atoms per unit length; integrates to N.
inline std::vector<double> ground_state_density(const GroundState& gs, const Lattice& lattice) {
    if (static_cast<int>(gs.amplitudes.size()) != lattice.m_cells)
        throw std::invalid_argument("ground_state_density: size mismatch");
    std::vector<double> n(gs.amplitudes.size());
    for (std::size_t i = 0; i < n.size(); ++i) n[i] = gs.amplitudes[i] * gs.amplitudes[i];
    return n;
}

}  // namespace cmbec

#endif
