#ifndef CMBEC_ORACLE_HPP
#define CMBEC_ORACLE_HPP

#include <cmath>
#include <complex>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "cmbec/lattice.hpp"
#include "cmbec/meanfield.hpp"
#include "cmbec/params.hpp"

namespace cmbec {

// ---------------------------------------------------------------------------
// Closed-form second moments of the linear moment system
//
//   dv_x/dt = c,   dv_p/dt = -c + 2 k~,   dc/dt = 2 v_p - r v_x
//
// (m = omega0 = 1), where r is the restoring coefficient: r = 2 is the
// noninteracting phase-space (Fokker-Planck) dynamics, r = 4 is the g = 0
// limit of the closed moment system integrated by the mean-field tier.
//
// Derivation: the sum obeys d(v_x + v_p)/dt = 2 k~, so v_x + v_p = S0 + 2 k~ t.
// Eliminating c gives  v_x'' + (r + 2) v_x = 2 S0 + 4 k~ t,  a driven
// oscillator with frequency w = sqrt(r + 2). With the particular solution
// v_x,part = (2 S0 + 4 k~ t)/(r + 2):
//   v_x(t) = v_x,part + E cos(w t) + F sin(w t),
//   E = v_x(0) - 2 S0/(r + 2),  F = (c(0) - 4 k~/(r + 2)) / w,
//   c = dv_x/dt,  v_p = S0 + 2 k~ t - v_x.
// For r = 2 and the minimum-uncertainty start (1/2, 1/2, 0) this reduces to
//   v_x = 1/2 + k~ (t - sin(2t)/2),  v_p = 1/2 + k~ (t + sin(2t)/2),
//   c = k~ (1 - cos 2t).
// ---------------------------------------------------------------------------
inline MomentState analytic_moments_linear(double t, double kappa_tilde, const MomentState& initial,
                                           double restoring_coeff) {
    const double r = restoring_coeff;
    const double w = std::sqrt(r + 2.0);
    const double s0 = initial.var_x + initial.var_p;
    const double slope = 4.0 * kappa_tilde / (r + 2.0);
    const double e = initial.var_x - 2.0 * s0 / (r + 2.0);
    const double f = (initial.cov_xp - slope) / w;
    MomentState out;
    out.var_x = 2.0 * s0 / (r + 2.0) + slope * t + e * std::cos(w * t) + f * std::sin(w * t);
    out.cov_xp = slope - e * w * std::sin(w * t) + f * w * std::cos(w * t);
    out.var_p = s0 + 2.0 * kappa_tilde * t - out.var_x;
    return out;
}

// Exact noninteracting moments under continuous collective-position
// measurement (restoring coefficient 2).
inline MomentState analytic_moments_noninteracting(double t, double kappa_tilde,
                                                   const MomentState& initial) {
    if (t < 0.0) throw std::invalid_argument("analytic_moments_noninteracting: t must be >= 0");
    return analytic_moments_linear(t, kappa_tilde, initial, 2.0);
}

// ---------------------------------------------------------------------------
// Single-particle propagator exp(-i Upsilon t) via dense eigendecomposition.
// Linear-limit oracle for the stochastic drift (g = kappa = 0).
// ---------------------------------------------------------------------------
inline Eigen::VectorXcd single_particle_evolve(const HoppingMatrix& hopping,
                                               const Eigen::VectorXcd& amplitudes, double t) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hopping.dense());
    if (es.info() != Eigen::Success)
        throw std::runtime_error("single_particle_evolve: eigendecomposition failed");
    const Eigen::VectorXcd modes = es.eigenvectors().transpose() * amplitudes;
    Eigen::VectorXcd rotated(modes.size());
    for (Eigen::Index k = 0; k < modes.size(); ++k)
        rotated[k] = modes[k] * std::exp(std::complex<double>(0.0, -es.eigenvalues()[k] * t));
    return es.eigenvectors() * rotated;
}

// ---------------------------------------------------------------------------
// Dense master-equation oracle on a truncated Fock space (small lattices).
// ---------------------------------------------------------------------------

struct FockConfig {
    int m_cells = 0;
    int n_max = 0;  // per-cell occupation cutoff

    long dimension() const {
        long d = 1;
        for (int i = 0; i < m_cells; ++i) d *= n_max + 1;
        return d;
    }
    void validate() const {
        if (m_cells < 1 || m_cells > 4) throw std::invalid_argument("fock: m_cells must be 1..4");
        if (n_max < 1) throw std::invalid_argument("fock: n_max must be >= 1");
        if (dimension() > 4096) throw std::invalid_argument("fock: dimension exceeds 4096");
    }
};

struct FockExpectations {
    std::vector<double> n;       // Re<n_i>
    std::vector<double> g2_num;  // Re<a+_c a+_i a_i a_c>, c the central cell
    double x_mean = 0.0;         // <X>, X = (1/N) sum x_i n_i
    double x2_mean = 0.0;        // <X^2>
    double trace_error = 0.0;    // |tr(rho) - 1| at the end of the run
    double hermiticity_error = 0.0;
    double truncation_loss = 0.0;
    double step_used = 0.0;
};

namespace detail {

// Occupation-number basis with cell-major indexing: idx = sum_i n_i (n_max+1)^i.
class FockBasis {
public:
    explicit FockBasis(const FockConfig& cfg) : cfg_(cfg), dim_(cfg.dimension()) {
        cfg.validate();
        strides_.resize(static_cast<std::size_t>(cfg.m_cells));
        long s = 1;
        for (int i = 0; i < cfg.m_cells; ++i) {
            strides_[static_cast<std::size_t>(i)] = s;
            s *= cfg.n_max + 1;
        }
    }

    long dim() const { return dim_; }
    int occupation(long idx, int cell) const {
        return static_cast<int>((idx / strides_[static_cast<std::size_t>(cell)]) % (cfg_.n_max + 1));
    }
    long stride(int cell) const { return strides_[static_cast<std::size_t>(cell)]; }
    const FockConfig& config() const { return cfg_; }

private:
    FockConfig cfg_;
    long dim_;
    std::vector<long> strides_;
};

// H = sum_ij Upsilon_ij a+_i a_j + (g/(2 dx)) sum_i n_i (n_i - 1), real sparse.
inline Eigen::SparseMatrix<double> build_hamiltonian(const FockBasis& basis, const Lattice& lattice,
                                                     const HoppingMatrix& hop, double g1d) {
    const int m = basis.config().m_cells;
    const int nmax = basis.config().n_max;
    const double u_int = 0.5 * g1d / lattice.dx;
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(static_cast<std::size_t>(basis.dim()) * static_cast<std::size_t>(2 * m));
    for (long s = 0; s < basis.dim(); ++s) {
        double diag = 0.0;
        for (int i = 0; i < m; ++i) {
            const int ni = basis.occupation(s, i);
            diag += hop.diag[static_cast<std::size_t>(i)] * ni + u_int * ni * (ni - 1.0);
            // hopping i -> i+1 and back (a+_{i+1} a_i and a+_i a_{i+1})
            if (i + 1 < m) {
                const int nj = basis.occupation(s, i + 1);
                if (ni > 0 && nj < nmax) {
                    const long s2 = s - basis.stride(i) + basis.stride(i + 1);
                    const double amp = hop.off * std::sqrt(static_cast<double>(ni) * (nj + 1.0));
                    trips.emplace_back(static_cast<int>(s2), static_cast<int>(s), amp);
                    trips.emplace_back(static_cast<int>(s), static_cast<int>(s2), amp);
                }
            }
        }
        trips.emplace_back(static_cast<int>(s), static_cast<int>(s), diag);
    }
    Eigen::SparseMatrix<double> h(static_cast<int>(basis.dim()), static_cast<int>(basis.dim()));
    h.setFromTriplets(trips.begin(), trips.end());
    return h;
}

}  // namespace detail

// Evolves rho' = -i [H, rho] - kappa [X, [X, rho]] from a product of truncated
// coherent states with cell amplitudes `alpha0` (sum |alpha0|^2 = N), by
// classical RK4 with the step halved until all reported observables change by
// less than `converge_tol`. X carries the 1/N prefactor; with
// kappa = kappa_tilde N^2 the measurement superoperator depends on
// kappa_tilde alone, matching the stochastic tier's noise scaling.
inline FockExpectations master_equation_evolve(const FockConfig& fock, const PhysicalParams& params,
                                               const Lattice& lattice,
                                               const std::vector<std::complex<double>>& alpha0,
                                               double t_final, double h0 = 1e-3,
                                               double converge_tol = 1e-8,
                                               Eigen::MatrixXcd* final_rho = nullptr) {
    fock.validate();
    if (static_cast<int>(alpha0.size()) != fock.m_cells || fock.m_cells != lattice.m_cells)
        throw std::invalid_argument("master_equation_evolve: dimension mismatch");
    using cd = std::complex<double>;
    const detail::FockBasis basis(fock);
    const long d = basis.dim();
    const int m = fock.m_cells;

    // initial product coherent state, truncated at n_max per cell
    Eigen::VectorXcd psi = Eigen::VectorXcd::Zero(d);
    double truncation_loss = 0.0;
    {
        std::vector<std::vector<cd>> cell_amp(static_cast<std::size_t>(m));
        double kept_weight = 1.0;
        for (int i = 0; i < m; ++i) {
            auto& v = cell_amp[static_cast<std::size_t>(i)];
            v.resize(static_cast<std::size_t>(fock.n_max) + 1);
            const double a2 = std::norm(alpha0[static_cast<std::size_t>(i)]);
            cd amp = std::exp(-0.5 * a2);
            double cell_weight = 0.0;
            for (int n = 0; n <= fock.n_max; ++n) {
                v[static_cast<std::size_t>(n)] = amp;
                cell_weight += std::norm(amp);
                amp *= alpha0[static_cast<std::size_t>(i)] / std::sqrt(n + 1.0);
            }
            kept_weight *= cell_weight;
        }
        truncation_loss = 1.0 - kept_weight;
        if (truncation_loss > 1e-6)
            throw std::runtime_error("master_equation_evolve: coherent-state truncation loss " +
                                     std::to_string(truncation_loss) + " exceeds 1e-6; raise n_max");
        for (long s = 0; s < d; ++s) {
            cd a(1.0, 0.0);
            for (int i = 0; i < m; ++i)
                a *= cell_amp[static_cast<std::size_t>(i)][static_cast<std::size_t>(basis.occupation(s, i))];
            psi[s] = a;
        }
        psi /= psi.norm();
    }

    const HoppingMatrix hop = hopping_matrix(lattice);
    const Eigen::SparseMatrix<double> h_op = detail::build_hamiltonian(basis, lattice, hop, params.g1d);

    // X sum_i x_i n_i is diagonal; the double commutator acts elementwise as
    // -kappa_tilde (Xd_j - Xd_k)^2 rho_jk.
    Eigen::VectorXd xd(d);
    for (long s = 0; s < d; ++s) {
        double x = 0.0;
        for (int i = 0; i < m; ++i) x += lattice.positions[static_cast<std::size_t>(i)] * basis.occupation(s, i);
        xd[s] = x;
    }
    Eigen::MatrixXd damp(d, d);
    for (long j = 0; j < d; ++j)
        for (long k = 0; k < d; ++k) {
            const double dxq = xd[j] - xd[k];
            damp(j, k) = -params.kappa_tilde * dxq * dxq;
        }

    // rhs uses hermiticity: rho H = (H rho)^dagger for hermitian rho
    auto rhs = [&](const Eigen::MatrixXcd& rho, Eigen::MatrixXcd& out) {
        const Eigen::MatrixXcd h_rho = h_op.cast<cd>() * rho;
        out = cd(0.0, -1.0) * (h_rho - h_rho.adjoint());
        out.array() += damp.array().cast<cd>() * rho.array();
    };

    auto observables = [&](const Eigen::MatrixXcd& rho) {
        FockExpectations e;
        e.n.assign(static_cast<std::size_t>(m), 0.0);
        e.g2_num.assign(static_cast<std::size_t>(m), 0.0);
        const int c = (m - 1) / 2;
        const double inv_n = 1.0 / params.n_atoms;
        for (long s = 0; s < d; ++s) {
            const double p = rho(s, s).real();
            const int nc = basis.occupation(s, c);
            double xval = 0.0;
            for (int i = 0; i < m; ++i) {
                const int ni = basis.occupation(s, i);
                e.n[static_cast<std::size_t>(i)] += p * ni;
                // normal-ordered pair correlator: <a+_c a+_i a_i a_c> is diagonal in n
                e.g2_num[static_cast<std::size_t>(i)] += p * (i == c ? ni * (ni - 1.0) : static_cast<double>(ni) * nc);
                xval += lattice.positions[static_cast<std::size_t>(i)] * ni;
            }
            e.x_mean += p * xval * inv_n;
            e.x2_mean += p * xval * xval * inv_n * inv_n;
        }
        return e;
    };

    auto run_with_step = [&](double h) {
        Eigen::MatrixXcd rho = psi * psi.adjoint();
        const long n_steps = std::max<long>(1, std::lround(t_final / h));
        const double hh = t_final / static_cast<double>(n_steps);
        Eigen::MatrixXcd k1(d, d), k2(d, d), k3(d, d), k4(d, d), tmp(d, d);
        for (long s = 0; s < n_steps; ++s) {
            rhs(rho, k1);
            tmp = rho + 0.5 * hh * k1;
            rhs(tmp, k2);
            tmp = rho + 0.5 * hh * k2;
            rhs(tmp, k3);
            tmp = rho + hh * k3;
            rhs(tmp, k4);
            rho += (hh / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        FockExpectations e = observables(rho);
        e.trace_error = std::abs(rho.trace().real() - 1.0) + std::abs(rho.trace().imag());
        e.hermiticity_error = (rho - rho.adjoint().eval()).cwiseAbs().maxCoeff();
        e.step_used = hh;
        if (final_rho) *final_rho = rho;
        return e;
    };

    auto max_diff = [m](const FockExpectations& a, const FockExpectations& b) {
        double md = std::abs(a.x_mean - b.x_mean);
        md = std::max(md, std::abs(a.x2_mean - b.x2_mean));
        for (int i = 0; i < m; ++i) {
            md = std::max(md, std::abs(a.n[static_cast<std::size_t>(i)] - b.n[static_cast<std::size_t>(i)]));
            md = std::max(md, std::abs(a.g2_num[static_cast<std::size_t>(i)] - b.g2_num[static_cast<std::size_t>(i)]));
        }
        return md;
    };

    double h = h0;
    FockExpectations prev = run_with_step(h);
    for (int halvings = 0; halvings < 8; ++halvings) {
        h *= 0.5;
        FockExpectations next = run_with_step(h);
        if (max_diff(prev, next) < converge_tol) {
            prev = next;
            break;
        }
        prev = next;
        if (halvings == 7)
            throw std::runtime_error("master_equation_evolve: step adaptation did not converge");
    }
    prev.truncation_loss = truncation_loss;
    return prev;
}

}  // namespace cmbec

#endif
