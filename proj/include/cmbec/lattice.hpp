#ifndef CMBEC_LATTICE_HPP
#define CMBEC_LATTICE_HPP

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace cmbec {

// Uniform 1D grid of M cells of length dx, centered on the trap minimum:
// x_i = (i - (M+1)/2) dx for i = 1..M.  Positions are mirrored exactly,
// x_i = -x_{M+1-i}, so they sum to zero without rounding residue.
struct Lattice {
    int m_cells = 0;
    double dx = 0.0;
    std::vector<double> positions;

    double half_span() const { return 0.5 * m_cells * dx; }
    bool has_center_cell() const { return m_cells % 2 == 1; }
    int center_cell() const { return (m_cells - 1) / 2; }

    // True when the grid extends past nsig standard deviations on both sides.
    bool covers(double sigma, double nsig = 6.0) const { return half_span() >= nsig * sigma; }
};

inline Lattice build_lattice(int m_cells, double dx) {
    if (m_cells < 2) throw std::invalid_argument("build_lattice: m_cells must be >= 2");
    if (!(dx > 0.0)) throw std::invalid_argument("build_lattice: dx must be positive");
    Lattice lat;
    lat.m_cells = m_cells;
    lat.dx = dx;
    lat.positions.resize(m_cells);
    for (int i = 0; i < m_cells / 2; ++i) {
        double x = (i - 0.5 * (m_cells - 1)) * dx;
        lat.positions[i] = x;
        lat.positions[m_cells - 1 - i] = -x;
    }
    if (m_cells % 2 == 1) lat.positions[m_cells / 2] = 0.0;
    return lat;
}

// Single-particle lattice operator: kinetic energy (second-difference stencil)
// plus the harmonic trap, with m = omega0 = 1.
//   diag:     1/dx^2 + x_i^2/2
//   offdiag:  -1/(2 dx^2)  between neighbouring cells (Dirichlet at the edges)
// Stored as diagonal + scalar off-diagonal; dense() exports the full matrix.
struct HoppingMatrix {
    int m_cells = 0;
    double off = 0.0;
    std::vector<double> diag;

    double operator()(int i, int j) const {
        if (i == j) return diag[static_cast<std::size_t>(i)];
        if (i == j + 1 || j == i + 1) return off;
        return 0.0;
    }

    // y = Upsilon * v (tridiagonal apply)
    void apply(const double* v, double* y) const {
        const int m = m_cells;
        for (int i = 0; i < m; ++i) {
            double acc = diag[static_cast<std::size_t>(i)] * v[i];
            if (i > 0) acc += off * v[i - 1];
            if (i + 1 < m) acc += off * v[i + 1];
            y[i] = acc;
        }
    }

    Eigen::MatrixXd dense() const {
        Eigen::MatrixXd u = Eigen::MatrixXd::Zero(m_cells, m_cells);
        for (int i = 0; i < m_cells; ++i) {
            u(i, i) = diag[static_cast<std::size_t>(i)];
            if (i + 1 < m_cells) {
                u(i, i + 1) = off;
                u(i + 1, i) = off;
            }
        }
        return u;
    }
};

inline HoppingMatrix hopping_matrix(const Lattice& lattice) {
    HoppingMatrix h;
    h.m_cells = lattice.m_cells;
    h.off = -0.5 / (lattice.dx * lattice.dx);
    h.diag.resize(static_cast<std::size_t>(lattice.m_cells));
    const double inv_dx2 = 1.0 / (lattice.dx * lattice.dx);
    for (int i = 0; i < lattice.m_cells; ++i) {
        const double x = lattice.positions[static_cast<std::size_t>(i)];
        h.diag[static_cast<std::size_t>(i)] = inv_dx2 + 0.5 * x * x;
    }
    return h;
}

}  // namespace cmbec

#endif
