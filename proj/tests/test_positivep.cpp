#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>

#include <unsupported/Eigen/MatrixFunctions>

#include "cmbec/observables.hpp"
#include "cmbec/oracle.hpp"
#include "cmbec/positivep.hpp"
#include "cmbec/scenario.hpp"

using namespace cmbec;
using Catch::Approx;

namespace {

TrajectoryState zero_state(int m) {
    TrajectoryState s;
    s.ar.assign(static_cast<std::size_t>(m), 0.0);
    s.ai.assign(static_cast<std::size_t>(m), 0.0);
    s.br.assign(static_cast<std::size_t>(m), 0.0);
    s.bi.assign(static_cast<std::size_t>(m), 0.0);
    return s;
}

double& state_component(TrajectoryState& s, int idx) {
    const int m = s.m();
    if (idx < m) return s.ar[static_cast<std::size_t>(idx)];
    if (idx < 2 * m) return s.ai[static_cast<std::size_t>(idx - m)];
    if (idx < 3 * m) return s.br[static_cast<std::size_t>(idx - 2 * m)];
    return s.bi[static_cast<std::size_t>(idx - 3 * m)];
}

double component_of(const TrajectoryState& s, int idx) {
    return state_component(const_cast<TrajectoryState&>(s), idx);
}

}  // namespace

TEST_CASE("coherent initial state") {
    const Lattice lat = build_lattice(45, 0.33);
    PhysicalParams p;
    p.n_atoms = 100.0;
    p.g1d = 0.05;
    const GroundState gs = solve_ground_state(lat, p);
    const TrajectoryState s = init_coherent(gs, lat);
    double total = 0.0;
    for (int i = 0; i < lat.m_cells; ++i) {
        REQUIRE(s.ai[static_cast<std::size_t>(i)] == 0.0);
        REQUIRE(s.bi[static_cast<std::size_t>(i)] == 0.0);
        REQUIRE(s.br[static_cast<std::size_t>(i)] == s.ar[static_cast<std::size_t>(i)]);  // beta = alpha* exactly
        total += s.ar[static_cast<std::size_t>(i)] * s.br[static_cast<std::size_t>(i)];
    }
    REQUIRE(total == Approx(p.n_atoms).epsilon(1e-9));
}

TEST_CASE("drift leaves the interacting ground state stationary when noiseless") {
    const Lattice lat = build_lattice(45, 0.33);
    for (double g1dn : {0.0, 10.0}) {
        PhysicalParams p;
        p.n_atoms = 100.0;
        p.g1d = g1dn / p.n_atoms;
        const GroundState gs = solve_ground_state(lat, p);
        const Model mdl = make_model(p, lat);
        const TrajectoryState s = init_coherent(gs, lat);
        TrajectoryState d = zero_state(lat.m_cells);
        ito_drift(mdl, s, d);
        // occupations are static: dn'_i = a' db' + b' da' - a'' db'' - b'' da'' = 0
        for (int i = 0; i < lat.m_cells; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            const double dn = s.ar[k] * d.br[k] + s.br[k] * d.ar[k] - s.ai[k] * d.bi[k] -
                              s.bi[k] * d.ai[k];
            REQUIRE(std::abs(dn) < 1e-7);
        }
    }
}

TEST_CASE("drift preserves beta = alpha* conjugation") {
    const Lattice lat = build_lattice(9, 0.8);
    PhysicalParams p;
    p.n_atoms = 4.0;
    p.g1d = 0.3;
    p.kappa_tilde = 0.7;
    const Model mdl = make_model(p, lat);
    TrajectoryState s = zero_state(9);
    for (int i = 0; i < 9; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        s.ar[k] = std::sin(0.5 + i);
        s.ai[k] = 0.2 * std::cos(1.1 * i);
        s.br[k] = s.ar[k];
        s.bi[k] = -s.ai[k];  // beta = alpha*
    }
    TrajectoryState d = zero_state(9);
    ito_drift(mdl, s, d);
    for (int i = 0; i < 9; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        REQUIRE(d.br[k] == Approx(d.ar[k]).margin(1e-10));
        REQUIRE(d.bi[k] == Approx(-d.ai[k]).margin(1e-10));
    }
}

TEST_CASE("measurement terms vanish at the central cell") {
    const Lattice lat = build_lattice(9, 0.8);
    PhysicalParams with;
    with.n_atoms = 4.0;
    with.kappa_tilde = 2.0;
    PhysicalParams without = with;
    without.kappa_tilde = 0.0;
    TrajectoryState s = zero_state(9);
    for (int i = 0; i < 9; ++i) {
        s.ar[static_cast<std::size_t>(i)] = 0.3 + 0.1 * i;
        s.br[static_cast<std::size_t>(i)] = 0.4;
        s.ai[static_cast<std::size_t>(i)] = -0.2;
        s.bi[static_cast<std::size_t>(i)] = 0.15;
    }
    TrajectoryState da = zero_state(9), db = zero_state(9);
    ito_drift(make_model(with, lat), s, da);
    ito_drift(make_model(without, lat), s, db);
    const int c = lat.center_cell();
    // kappa x^2 damping has x = 0 at the center, nonzero elsewhere
    REQUIRE(da.ar[static_cast<std::size_t>(c)] == Approx(db.ar[static_cast<std::size_t>(c)]).margin(1e-14));
    REQUIRE(da.ar[0] != Approx(db.ar[0]).margin(1e-14));

    // the shared measurement noise also vanishes on a center-concentrated state
    TrajectoryState central = zero_state(9);
    central.ar[static_cast<std::size_t>(c)] = 1.0;
    central.br[static_cast<std::size_t>(c)] = 1.0;
    std::vector<double> dw_int(18, 0.0);
    TrajectoryState noise = zero_state(9);
    noise_increment(make_model(with, lat), central, dw_int.data(), 1.0, noise);
    for (int idx = 0; idx < 36; ++idx) REQUIRE(component_of(noise, idx) == 0.0);
}

TEST_CASE("noise vanishes with its coupling") {
    const Lattice lat = build_lattice(5, 1.0);
    TrajectoryState s = zero_state(5);
    for (int i = 0; i < 5; ++i) {
        s.ar[static_cast<std::size_t>(i)] = 0.7;
        s.ai[static_cast<std::size_t>(i)] = -0.3;
        s.br[static_cast<std::size_t>(i)] = 0.6;
        s.bi[static_cast<std::size_t>(i)] = 0.2;
    }
    std::vector<double> dw(10, 1.0);
    TrajectoryState out = zero_state(5);

    PhysicalParams meas_only;
    meas_only.n_atoms = 3.0;
    meas_only.kappa_tilde = 1.5;
    noise_increment(make_model(meas_only, lat), s, dw.data(), 0.0, out);
    for (int idx = 0; idx < 20; ++idx) REQUIRE(component_of(out, idx) == 0.0);

    PhysicalParams int_only;
    int_only.n_atoms = 3.0;
    int_only.g1d = 0.8;
    noise_increment(make_model(int_only, lat), s, std::vector<double>(10, 0.0).data(), 1.0, out);
    for (int idx = 0; idx < 20; ++idx) REQUIRE(component_of(out, idx) == 0.0);
}

TEST_CASE("midpoint drift equals Ito drift minus the noise-induced correction") {
    // finite-difference evaluation of (1/2) sum_k (B_k . grad) B_k against the
    // closed form baked into strat_drift
    const Lattice lat = build_lattice(3, 1.3);
    PhysicalParams p;
    p.n_atoms = 2.0;
    p.g1d = 0.9;
    p.kappa_tilde = 0.8;
    const Model mdl = make_model(p, lat);
    const int m = 3, dim = 4 * m, n_cols = 2 * m + 1;

    TrajectoryState s = zero_state(m);
    for (int i = 0; i < m; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        s.ar[k] = 0.4 + 0.2 * i;
        s.ai[k] = -0.1 + 0.05 * i;
        s.br[k] = 0.5 - 0.1 * i;
        s.bi[k] = 0.07 * i;
    }

    auto column = [&](const TrajectoryState& at, int k) {
        std::vector<double> dw(static_cast<std::size_t>(2 * m), 0.0);
        double dwm = 0.0;
        if (k < 2 * m)
            dw[static_cast<std::size_t>(k)] = 1.0;
        else
            dwm = 1.0;
        TrajectoryState out = zero_state(m);
        noise_increment(mdl, at, dw.data(), dwm, out);
        std::vector<double> col(static_cast<std::size_t>(dim));
        for (int idx = 0; idx < dim; ++idx) col[static_cast<std::size_t>(idx)] = component_of(out, idx);
        return col;
    };

    std::vector<double> correction_fd(static_cast<std::size_t>(dim), 0.0);
    const double eps = 1e-6;
    for (int k = 0; k < n_cols; ++k) {
        const std::vector<double> b = column(s, k);
        for (int nu = 0; nu < dim; ++nu) {
            TrajectoryState plus = s, minus = s;
            state_component(plus, nu) += eps;
            state_component(minus, nu) -= eps;
            const std::vector<double> bp = column(plus, k), bm = column(minus, k);
            for (int muc = 0; muc < dim; ++muc)
                correction_fd[static_cast<std::size_t>(muc)] +=
                    0.5 * b[static_cast<std::size_t>(nu)] *
                    (bp[static_cast<std::size_t>(muc)] - bm[static_cast<std::size_t>(muc)]) / (2.0 * eps);
        }
    }

    TrajectoryState di = zero_state(m), ds = zero_state(m);
    ito_drift(mdl, s, di);
    strat_drift(mdl, s, ds);
    for (int idx = 0; idx < dim; ++idx)
        REQUIRE(component_of(di, idx) - component_of(ds, idx) ==
                Approx(correction_fd[static_cast<std::size_t>(idx)]).margin(1e-6));
}

TEST_CASE("step leaves the null state untouched") {
    const Lattice lat = build_lattice(5, 1.0);
    PhysicalParams p;
    p.n_atoms = 1.0;
    p.g1d = 0.4;
    p.kappa_tilde = 0.3;
    const Model mdl = make_model(p, lat);
    TrajectoryState s = zero_state(5);
    StepWorkspace ws(5);
    std::vector<double> dw(10, 0.5);
    step_midpoint(mdl, s, 1e-3, 3, dw.data(), 0.7, ws);
    for (int idx = 0; idx < 20; ++idx) REQUIRE(component_of(s, idx) == 0.0);
    REQUIRE(s.t == Approx(1e-3));
}

TEST_CASE("noiseless stepping tracks the matrix exponential") {
    const Lattice lat = build_lattice(161, 0.1);
    PhysicalParams p;
    p.n_atoms = 1.0;
    const Model mdl = make_model(p, lat);
    const int m = lat.m_cells;

    TrajectoryState s = zero_state(m);
    Eigen::VectorXcd v0(m);
    double norm = 0.0;
    for (int i = 0; i < m; ++i) {
        const double x = lat.positions[static_cast<std::size_t>(i)];
        s.ar[static_cast<std::size_t>(i)] = std::exp(-0.5 * (x - 0.8) * (x - 0.8));
        norm += s.ar[static_cast<std::size_t>(i)] * s.ar[static_cast<std::size_t>(i)];
    }
    for (int i = 0; i < m; ++i) {
        s.ar[static_cast<std::size_t>(i)] /= std::sqrt(norm);
        s.br[static_cast<std::size_t>(i)] = s.ar[static_cast<std::size_t>(i)];
        v0[i] = s.ar[static_cast<std::size_t>(i)];
    }
    const std::vector<double> initial_n = s.ar;

    const double dt = 1e-3;
    StepWorkspace ws(m);
    const std::vector<double> no_noise(static_cast<std::size_t>(2 * m), 0.0);

    const long quarter = std::lround(1.0 / dt);
    for (long k = 0; k < quarter; ++k) step_midpoint(mdl, s, dt, 3, no_noise.data(), 0.0, ws);
    const Eigen::VectorXcd exact = single_particle_evolve(mdl.hopping, v0, 1.0);
    for (int i = 0; i < m; ++i) {
        REQUIRE(s.ar[static_cast<std::size_t>(i)] == Approx(exact[i].real()).margin(1e-4));
        REQUIRE(s.ai[static_cast<std::size_t>(i)] == Approx(-exact[i].imag()).margin(1e-4));
    }

    // continue to one full trap period: occupations recur
    const long rest = std::lround((2.0 * M_PI - 1.0) / dt);
    for (long k = 0; k < rest; ++k) step_midpoint(mdl, s, dt, 3, no_noise.data(), 0.0, ws);
    for (int i = 0; i < m; ++i) {
        const std::size_t k2 = static_cast<std::size_t>(i);
        const double n_now = s.ar[k2] * s.ar[k2] + s.ai[k2] * s.ai[k2];
        REQUIRE(n_now == Approx(initial_n[k2] * initial_n[k2]).margin(5e-4));
    }
}

TEST_CASE("deterministic replay and worker-count stability") {
    const SmallInstance si = small_instance();
    const GroundState gs = si.as_ground_state();
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_trajectories = 64;
    cfg.t_final = 0.05;
    cfg.seed = 99;
    EnsembleOptions one;
    one.threads = 1;
    const auto a = run_ensemble(gs, si.params, si.lattice, cfg, {cfg.t_final}, one);
    const auto b = run_ensemble(gs, si.params, si.lattice, cfg, {cfg.t_final}, one);
    for (int i = 0; i < 3; ++i) {
        REQUIRE(a.back().sum_nr[static_cast<std::size_t>(i)] == b.back().sum_nr[static_cast<std::size_t>(i)]);
        REQUIRE(a.back().sum_qr[static_cast<std::size_t>(i)] == b.back().sum_qr[static_cast<std::size_t>(i)]);
    }
    EnsembleOptions four;
    four.threads = 4;
    const auto c = run_ensemble(gs, si.params, si.lattice, cfg, {cfg.t_final}, four);
    for (int i = 0; i < 3; ++i)
        REQUIRE(c.back().sum_nr[static_cast<std::size_t>(i)] ==
                Approx(a.back().sum_nr[static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("divergence guard aborts with a diagnostic") {
    const SmallInstance si = small_instance();
    const GroundState gs = si.as_ground_state();
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_trajectories = 4;
    cfg.t_final = 0.05;
    cfg.divergence_threshold = 0.5;  // below the initial occupation, triggers immediately
    try {
        run_ensemble(gs, si.params, si.lattice, cfg, {cfg.t_final});
        FAIL("expected DivergenceError");
    } catch (const DivergenceError& e) {
        REQUIRE(e.trajectory >= 0);
        REQUIRE(e.time > 0.0);
    }
}

TEST_CASE("conjugate symmetry survives measurement noise at g = 0") {
    const Lattice lat = build_lattice(11, 0.9);
    PhysicalParams p;
    p.n_atoms = 5.0;
    p.kappa_tilde = 1.0;
    const GroundState gs = solve_ground_state(lat, p, [] {
        GpeOptions o;
        o.check_coverage = false;
        return o;
    }());
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_trajectories = 50;
    cfg.t_final = 0.3;
    const auto accs = run_ensemble(gs, p, lat, cfg, {cfg.t_final});
    REQUIRE(accs.back().mean_beta_deviation() < 1e-10);
}

TEST_CASE("number conservation and imaginary-part purity") {
    const SmallInstance si = small_instance();
    const GroundState gs = si.as_ground_state();
    SimConfig cfg;
    cfg.dt = 2e-4;
    cfg.n_trajectories = 4000;
    cfg.t_final = 0.1;
    cfg.seed = 4242;
    const auto accs = run_ensemble(gs, si.params, si.lattice, cfg, {0.0, 0.05, 0.1});
    for (const auto& acc : accs) {
        const double n = acc.total_number();
        const double err = acc.total_number_stderr();
        REQUIRE(std::abs(n - si.params.n_atoms) <= std::max(3.0 * err, 1e-9));
        for (int i = 0; i < 3; ++i)
            REQUIRE(std::abs(acc.mean_ni(i)) <=
                    std::max(3.0 * acc.stderr_ni(i), 1e-9));
    }
}

TEST_CASE("ensemble mean follows the deterministic drift at g = 0") {
    // with linear drift the Ito mean obeys d<a>/dt = (-i Upsilon - k~ x^2) <a>
    const Lattice lat = build_lattice(5, 1.2);
    PhysicalParams p;
    p.n_atoms = 2.0;
    p.kappa_tilde = 1.0;
    const Model mdl = make_model(p, lat);
    const int m = 5;

    TrajectoryState base = zero_state(m);
    const double amp[5] = {0.2, 0.8, 1.0, 0.8, 0.2};
    for (int i = 0; i < m; ++i) base.ar[static_cast<std::size_t>(i)] = base.br[static_cast<std::size_t>(i)] = amp[i];

    const double t = 0.3, dt = 1e-3;
    const long n_steps = std::lround(t / dt), n_traj = 20000;
    std::vector<double> mean_ar(static_cast<std::size_t>(m), 0.0), mean_ai(static_cast<std::size_t>(m), 0.0);
    StepWorkspace ws(m);
    for (long j = 0; j < n_traj; ++j) {
        GaussianStream rng = trajectory_stream(7, static_cast<std::uint64_t>(j));
        TrajectoryState s = base;
        for (long k = 0; k < n_steps; ++k) {
            double dwm = 0.0;
            draw_increments(mdl, rng, std::sqrt(dt), ws, dwm);
            step_midpoint(mdl, s, dt, 3, ws.dw_int.data(), dwm, ws);
        }
        for (int i = 0; i < m; ++i) {
            mean_ar[static_cast<std::size_t>(i)] += s.ar[static_cast<std::size_t>(i)] / n_traj;
            mean_ai[static_cast<std::size_t>(i)] += s.ai[static_cast<std::size_t>(i)] / n_traj;
        }
    }

    Eigen::MatrixXcd gen = Eigen::MatrixXcd::Zero(m, m);
    const Eigen::MatrixXd ups = mdl.hopping.dense();
    for (int i = 0; i < m; ++i)
        for (int j2 = 0; j2 < m; ++j2) gen(i, j2) = std::complex<double>(0.0, -ups(i, j2));
    for (int i = 0; i < m; ++i) gen(i, i) -= mdl.kx2[static_cast<std::size_t>(i)];
    const Eigen::MatrixXcd prop = (gen * t).exp();
    Eigen::VectorXcd a0(m);
    for (int i = 0; i < m; ++i) a0[i] = amp[i];
    const Eigen::VectorXcd expect = prop * a0;
    for (int i = 0; i < m; ++i) {
        REQUIRE(mean_ar[static_cast<std::size_t>(i)] == Approx(expect[i].real()).margin(0.02));
        REQUIRE(mean_ai[static_cast<std::size_t>(i)] == Approx(expect[i].imag()).margin(0.02));
    }
}

TEST_CASE("flipping the measurement noise sign leaves observables unchanged") {
    // only B B^T enters the averages, so the overall column sign is a gauge choice
    const SmallInstance si = small_instance();
    const int m = 3;
    const TrajectoryState base = init_coherent(si.as_ground_state(), si.lattice);
    Model mdl = make_model(si.params, si.lattice);
    const double t = 0.08, dt = 5e-4;
    const long n_steps = std::lround(t / dt), n_traj = 6000;

    auto run_mean = [&](double sign, std::uint64_t seed) {
        Model flipped = mdl;
        flipped.noise_meas *= sign;
        std::vector<double> mean_n(static_cast<std::size_t>(m), 0.0), var_n(static_cast<std::size_t>(m), 0.0);
        StepWorkspace ws(m);
        for (long j = 0; j < n_traj; ++j) {
            GaussianStream rng = trajectory_stream(seed, static_cast<std::uint64_t>(j));
            TrajectoryState s = base;
            for (long k = 0; k < n_steps; ++k) {
                double dwm = 0.0;
                draw_increments(flipped, rng, std::sqrt(dt), ws, dwm);
                step_midpoint(flipped, s, dt, 3, ws.dw_int.data(), dwm, ws);
            }
            for (int i = 0; i < m; ++i) {
                const std::size_t k2 = static_cast<std::size_t>(i);
                const double n = s.ar[k2] * s.br[k2] - s.ai[k2] * s.bi[k2];
                mean_n[k2] += n / n_traj;
                var_n[k2] += n * n / n_traj;
            }
        }
        for (int i = 0; i < m; ++i) {
            const std::size_t k2 = static_cast<std::size_t>(i);
            var_n[k2] = (var_n[k2] - mean_n[k2] * mean_n[k2]) / n_traj;
        }
        return std::make_pair(mean_n, var_n);
    };

    const auto [na, va] = run_mean(+1.0, 21);
    const auto [nb, vb] = run_mean(-1.0, 22);
    for (int i = 0; i < m; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double tol = 3.0 * std::sqrt(va[k] + vb[k]);
        REQUIRE(std::abs(na[k] - nb[k]) <= tol);
    }
}

TEST_CASE("midpoint and Euler-Maruyama agree on ensemble means") {
    // fast version of the integrator cross-check: same instance, small horizon
    const SmallInstance si = small_instance();
    const GroundState gs = si.as_ground_state();
    SimConfig mid_cfg;
    mid_cfg.dt = 2e-4;
    mid_cfg.n_trajectories = 20000;
    mid_cfg.t_final = 0.05;
    mid_cfg.seed = 31;
    const auto mid = run_ensemble(gs, si.params, si.lattice, mid_cfg, {mid_cfg.t_final});

    SimConfig em_cfg = mid_cfg;
    em_cfg.dt = 2e-5;
    em_cfg.seed = 32;
    EnsembleOptions em_opts;
    em_opts.use_euler_maruyama = true;
    const auto em = run_ensemble(gs, si.params, si.lattice, em_cfg, {em_cfg.t_final}, em_opts);

    for (int i = 0; i < 3; ++i) {
        const double diff = std::abs(mid.back().mean_nr(i) - em.back().mean_nr(i));
        const double tol = 3.0 * std::hypot(mid.back().stderr_nr(i), em.back().stderr_nr(i));
        REQUIRE(diff <= tol);
    }
}

TEST_CASE("closed noiseless ensemble is stationary") {
    const Lattice lat = build_lattice(11, 0.9);
    PhysicalParams p;
    p.n_atoms = 5.0;
    GpeOptions gopts;
    gopts.check_coverage = false;
    const GroundState gs = solve_ground_state(lat, p, gopts);
    SimConfig cfg;
    cfg.dt = 1e-3;
    cfg.n_trajectories = 3;
    cfg.t_final = 0.5;
    const auto accs = run_ensemble(gs, p, lat, cfg, {0.0, 0.5});
    for (int i = 0; i < lat.m_cells; ++i)
        REQUIRE(accs[1].mean_nr(i) == Approx(accs[0].mean_nr(i)).margin(1e-8));
}

TEST_CASE("sim config validation") {
    SimConfig cfg;
    REQUIRE_NOTHROW(cfg.validate());
    cfg.dt = 0.5;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.dt = 1e-3;
    cfg.n_trajectories = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.n_trajectories = 10;
    cfg.implicit_iterations = 0;
    REQUIRE_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("gaussian stream contract") {
    GaussianStream g1(splitmix64(5));
    GaussianStream g2(splitmix64(5));
    for (int k = 0; k < 100; ++k) REQUIRE(g1.normal() == g2.normal());  // bit-exact replay

    GaussianStream g(1234);
    const int n = 200000;
    double mean = 0.0, var = 0.0, lag = 0.0, prev = g.normal();
    for (int k = 0; k < n; ++k) {
        const double x = g.normal();
        mean += x;
        var += x * x;
        lag += x * prev;
        prev = x;
    }
    mean /= n;
    var = var / n - mean * mean;
    lag /= n;
    REQUIRE(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(var == Approx(1.0).epsilon(0.02));
    REQUIRE(std::abs(lag) < 4.0 / std::sqrt(static_cast<double>(n)));
}
