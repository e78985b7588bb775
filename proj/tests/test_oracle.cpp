#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include "cmbec/oracle.hpp"

using namespace cmbec;
using Catch::Approx;

namespace {

// brute-force RK4 integration of the linear moment system, used to cross-check
// the closed form independently of it
MomentState integrate_linear_bruteforce(double t, double kappa, MomentState s, double restoring) {
    const int n = 200000;
    const double h = t / n;
    auto rhs = [&](const MomentState& y) {
        return MomentState{y.cov_xp, -y.cov_xp + 2.0 * kappa, 2.0 * y.var_p - restoring * y.var_x};
    };
    auto axpy = [](const MomentState& a, double c, const MomentState& b) {
        return MomentState{a.var_x + c * b.var_x, a.var_p + c * b.var_p, a.cov_xp + c * b.cov_xp};
    };
    for (int k = 0; k < n; ++k) {
        const MomentState k1 = rhs(s), k2 = rhs(axpy(s, 0.5 * h, k1)), k3 = rhs(axpy(s, 0.5 * h, k2)),
                          k4 = rhs(axpy(s, h, k3));
        s.var_x += h / 6.0 * (k1.var_x + 2 * k2.var_x + 2 * k3.var_x + k4.var_x);
        s.var_p += h / 6.0 * (k1.var_p + 2 * k2.var_p + 2 * k3.var_p + k4.var_p);
        s.cov_xp += h / 6.0 * (k1.cov_xp + 2 * k2.cov_xp + 2 * k3.cov_xp + k4.cov_xp);
    }
    return s;
}

}  // namespace

TEST_CASE("analytic moments: boundary cases") {
    const MomentState init{0.5, 0.5, 0.0};
    const MomentState at0 = analytic_moments_noninteracting(0.0, 3.0, init);
    REQUIRE(at0.var_x == Approx(init.var_x));
    REQUIRE(at0.var_p == Approx(init.var_p));
    REQUIRE(at0.cov_xp == Approx(init.cov_xp).margin(1e-15));

    // closed system: moments oscillate, var_x + var_p conserved
    const MomentState skew{0.9, 0.4, 0.1};
    for (double t : {0.3, 1.1, 2.9}) {
        const MomentState m = analytic_moments_noninteracting(t, 0.0, skew);
        REQUIRE(m.var_x + m.var_p == Approx(skew.var_x + skew.var_p).epsilon(1e-12));
    }

    REQUIRE(analytic_moments_noninteracting(M_PI_2, 1.0, init).var_x ==
            Approx(0.5 + M_PI_2).epsilon(1e-12));
    REQUIRE_THROWS_AS(analytic_moments_noninteracting(-0.1, 1.0, init), std::invalid_argument);
}

TEST_CASE("analytic moments agree with brute-force integration") {
    const MomentState init{0.62, 0.51, -0.08};
    for (double restoring : {2.0, 4.0}) {
        for (double kappa : {0.0, 1.7}) {
            const MomentState closed = analytic_moments_linear(1.3, kappa, init, restoring);
            const MomentState brute = integrate_linear_bruteforce(1.3, kappa, init, restoring);
            REQUIRE(closed.var_x == Approx(brute.var_x).epsilon(1e-9));
            REQUIRE(closed.var_p == Approx(brute.var_p).epsilon(1e-9));
            REQUIRE(closed.cov_xp == Approx(brute.cov_xp).margin(1e-9));
        }
    }
}

TEST_CASE("analytic moments satisfy the moment ODEs under numerical differentiation") {
    const MomentState init{0.5, 0.5, 0.0};
    const double kappa = 2.0, t = 0.8, eps = 1e-5;
    const MomentState plus = analytic_moments_noninteracting(t + eps, kappa, init);
    const MomentState minus = analytic_moments_noninteracting(t - eps, kappa, init);
    const MomentState mid = analytic_moments_noninteracting(t, kappa, init);
    REQUIRE((plus.var_x - minus.var_x) / (2 * eps) == Approx(mid.cov_xp).margin(1e-6));
    REQUIRE((plus.var_p - minus.var_p) / (2 * eps) == Approx(-mid.cov_xp + 2 * kappa).margin(1e-6));
    REQUIRE((plus.cov_xp - minus.cov_xp) / (2 * eps) ==
            Approx(2 * mid.var_p - 2 * mid.var_x).margin(1e-6));
}

TEST_CASE("single-particle evolver") {
    const Lattice lat = build_lattice(41, 0.25);
    const HoppingMatrix hop = hopping_matrix(lat);

    Eigen::VectorXcd v(41);
    for (int i = 0; i < 41; ++i) v[i] = std::complex<double>(std::exp(-0.3 * i), 0.1 * i);
    REQUIRE((single_particle_evolve(hop, v, 0.0) - v).cwiseAbs().maxCoeff() < 1e-12);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hop.dense());
    const Eigen::VectorXcd ground = es.eigenvectors().col(0).cast<std::complex<double>>();
    const Eigen::VectorXcd rotated = single_particle_evolve(hop, ground, 0.7);
    for (int i = 0; i < 41; ++i)
        REQUIRE(std::norm(rotated[i]) == Approx(std::norm(ground[i])).margin(1e-12));
    const std::complex<double> phase = rotated[20] / ground[20];
    REQUIRE(std::arg(phase) == Approx(-es.eigenvalues()[0] * 0.7).margin(1e-10));

    // displaced low-lying state returns to itself after one trap period on a fine grid
    const Lattice fine = build_lattice(161, 0.1);
    const HoppingMatrix fhop = hopping_matrix(fine);
    Eigen::VectorXcd packet(161);
    for (int i = 0; i < 161; ++i) {
        const double x = fine.positions[static_cast<std::size_t>(i)];
        packet[i] = std::exp(-0.5 * (x - 0.8) * (x - 0.8));
    }
    const Eigen::VectorXcd cycled = single_particle_evolve(fhop, packet, 2.0 * M_PI);
    for (int i = 0; i < 161; ++i)
        REQUIRE(std::norm(cycled[i]) == Approx(std::norm(packet[i])).margin(2e-4));
}

TEST_CASE("fock config bounds") {
    REQUIRE(FockConfig{3, 9}.dimension() == 1000);
    REQUIRE_NOTHROW(FockConfig{4, 7}.validate());   // 8^4 = 4096
    REQUIRE_THROWS_AS(FockConfig{4, 8}.validate(), std::invalid_argument);
    REQUIRE_THROWS_AS(FockConfig{5, 2}.validate(), std::invalid_argument);
}

TEST_CASE("master equation: two-site Rabi oscillation") {
    // one (mean) atom on the left of a symmetric double cell, g = kappa = 0:
    // occupations swing at the hopping frequency |J| = 1/(2 dx^2)
    const Lattice lat = build_lattice(2, 1.0);
    PhysicalParams p;
    p.n_atoms = 1.0;
    const FockConfig fock{2, 9};
    const double t = 1.0, j_abs = 0.5;
    const auto e = master_equation_evolve(fock, p, lat, {1.0, 0.0}, t);
    REQUIRE(e.n[0] == Approx(std::cos(j_abs * t) * std::cos(j_abs * t)).margin(1e-6));
    REQUIRE(e.n[1] == Approx(std::sin(j_abs * t) * std::sin(j_abs * t)).margin(1e-6));
}

TEST_CASE("master equation: number conserved with both couplings on") {
    const Lattice lat = build_lattice(2, 1.0);
    PhysicalParams p;
    p.n_atoms = 1.0;
    p.g1d = 0.7;
    p.kappa_tilde = 0.9;
    const auto e = master_equation_evolve(FockConfig{2, 9}, p, lat, {0.8, 0.6}, 0.5);
    REQUIRE(e.n[0] + e.n[1] == Approx(1.0).margin(1e-8));
    REQUIRE(e.trace_error < 1e-9);
    REQUIRE(e.hermiticity_error < 1e-9);
}

TEST_CASE("master equation: density matrix stays positive") {
    const Lattice lat = build_lattice(2, 1.0);
    PhysicalParams p;
    p.n_atoms = 1.0;
    p.g1d = 0.5;
    p.kappa_tilde = 1.5;
    Eigen::MatrixXcd rho;
    master_equation_evolve(FockConfig{2, 8}, p, lat, {0.7, std::complex<double>(0.5, 0.4)}, 0.4,
                           1e-3, 1e-8, &rho);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(rho);
    REQUIRE(es.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("master equation matches the single-particle evolver when linear") {
    const Lattice lat = build_lattice(3, 1.2);
    PhysicalParams p;
    p.n_atoms = 0.81 + 0.25 + 0.04;
    const std::vector<std::complex<double>> amp = {0.5, 0.9, 0.2};
    const double t = 0.6;
    const auto e = master_equation_evolve(FockConfig{3, 8}, p, lat, amp, t);

    Eigen::VectorXcd v(3);
    for (int i = 0; i < 3; ++i) v[i] = amp[static_cast<std::size_t>(i)];
    const Eigen::VectorXcd w = single_particle_evolve(hopping_matrix(lat), v, t);
    for (int i = 0; i < 3; ++i) REQUIRE(e.n[static_cast<std::size_t>(i)] == Approx(std::norm(w[i])).margin(1e-8));
}

TEST_CASE("coherent-state truncation loss is enforced") {
    const Lattice lat = build_lattice(2, 1.0);
    PhysicalParams p;
    p.n_atoms = 9.0;
    // |alpha|^2 = 9 atoms in one cell cannot be held below loss 1e-6 by n_max = 9
    REQUIRE_THROWS_AS(master_equation_evolve(FockConfig{2, 9}, p, lat, {3.0, 0.0}, 0.1),
                      std::runtime_error);
}
