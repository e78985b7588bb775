#ifndef CMBEC_POSITIVEP_HPP
#define CMBEC_POSITIVEP_HPP

#include <atomic>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cmbec/gpe.hpp"
#include "cmbec/lattice.hpp"
#include "cmbec/params.hpp"
#include "cmbec/rng.hpp"

namespace cmbec {

// One stochastic trajectory of the doubled lattice phase space: complex cell
// amplitudes alpha_i and beta_i stored as four real arrays of length M. The
// complex cell occupation n_i = alpha_i beta_i has
//   n'_i = a'_i b'_i - a''_i b''_i,   n''_i = a'_i b''_i + a''_i b'_i,
// and <beta_i alpha_i> estimates the physical occupation of cell i.
struct TrajectoryState {
    std::vector<double> ar, ai;  // alpha', alpha''
    std::vector<double> br, bi;  // beta', beta''
    double t = 0.0;

    int m() const { return static_cast<int>(ar.size()); }
};

struct SimConfig {
    double dt = 1e-4;
    long n_trajectories = 20000;
    double t_final = 1.5707963267948966;  // quarter trap period, pi/2
    std::uint64_t seed = 20260810ULL;
    int implicit_iterations = 3;
    double divergence_threshold = 0.0;  // |n_i| guard; 0 = auto (1e3 * N)

    void validate() const {
        if (!(dt > 0.0) || dt > 1e-2)
            throw std::invalid_argument("sim: dt must lie in (0, 1e-2]");
        if (n_trajectories < 1) throw std::invalid_argument("sim: n_trajectories must be >= 1");
        if (!(t_final > 0.0)) throw std::invalid_argument("sim: t_final must be positive");
        if (implicit_iterations < 1 || implicit_iterations > 64)
            throw std::invalid_argument("sim: implicit_iterations must be 1..64");
        if (divergence_threshold < 0.0)
            throw std::invalid_argument("sim: divergence_threshold must be >= 0");
        if (t_final > M_PI)
            std::cerr << "warning: t_final " << t_final
                      << " exceeds pi; trajectories may leave the secure window\n";
    }
};

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(long trajectory, double time)
        : std::runtime_error("trajectory " + std::to_string(trajectory) + " diverged at t = " +
                             std::to_string(time)),
          trajectory(trajectory),
          time(time) {}
    long trajectory;
    double time;
};

// Precomputed per-run constants. The interaction enters the drift with
// coefficient g/dx and the noise with sqrt(g/(2 dx)); both follow from the
// on-site interaction energy (g/(2 dx)) n (n - 1) per cell. The collective
// position measurement contributes the damping kappa_tilde x_i^2 and a single
// shared noise of strength sqrt(2 kappa_tilde) x_i.
struct Model {
    PhysicalParams params;
    Lattice lattice;
    HoppingMatrix hopping;
    double g_over_dx = 0.0;
    double noise_int = 0.0;    // sqrt(g / (2 dx))
    double strat_shift = 0.0;  // g / (2 dx)
    double noise_meas = 0.0;   // sqrt(2 kappa_tilde)
    std::vector<double> kx2;   // kappa_tilde * x_i^2
};

inline Model make_model(const PhysicalParams& params, const Lattice& lattice) {
    params.validate();
    Model mdl;
    mdl.params = params;
    mdl.lattice = lattice;
    mdl.hopping = hopping_matrix(lattice);
    mdl.g_over_dx = params.g1d / lattice.dx;
    mdl.strat_shift = 0.5 * params.g1d / lattice.dx;
    mdl.noise_int = std::sqrt(mdl.strat_shift);
    mdl.noise_meas = std::sqrt(2.0 * params.kappa_tilde);
    mdl.kx2.resize(lattice.positions.size());
    for (std::size_t i = 0; i < mdl.kx2.size(); ++i)
        mdl.kx2[i] = params.kappa_tilde * lattice.positions[i] * lattice.positions[i];
    return mdl;
}

// Broken-symmetry coherent initial state: alpha_i = beta_i = phi(x_i) sqrt(dx)
// (the sqrt(dx) converts field amplitude to cell amplitude), so beta = alpha*
// exactly at t = 0 and sum_i n'_i = N.
inline TrajectoryState init_coherent(const GroundState& gs, const Lattice& lattice) {
    if (static_cast<int>(gs.amplitudes.size()) != lattice.m_cells)
        throw std::invalid_argument("init_coherent: ground state does not match lattice");
    TrajectoryState s;
    const std::size_t m = gs.amplitudes.size();
    s.ar.resize(m);
    s.ai.assign(m, 0.0);
    s.br.resize(m);
    s.bi.assign(m, 0.0);
    const double sq = std::sqrt(lattice.dx);
    for (std::size_t i = 0; i < m; ++i) {
        s.ar[i] = gs.amplitudes[i] * sq;
        s.br[i] = s.ar[i];
    }
    s.t = 0.0;
    return s;
}

// Ito drift, all four blocks:
//   A'_i      =  U_ij a''_j + (g/dx)(n''_i a'_i + n'_i a''_i) - k~ x_i^2 a'_i
//   A''_i     = -U_ij a'_j  - (g/dx)(n'_i a'_i - n''_i a''_i) - k~ x_i^2 a''_i
//   A'_{i+M}  = -U_ji b''_j - (g/dx)(n''_i b'_i + n'_i b''_i) - k~ x_i^2 b'_i
//   A''_{i+M} =  U_ji b'_j  + (g/dx)(n'_i b'_i - n''_i b''_i) - k~ x_i^2 b''_i
inline void ito_drift(const Model& mdl, const TrajectoryState& s, TrajectoryState& d) {
    const int m = s.m();
    mdl.hopping.apply(s.ai.data(), d.ar.data());   //  U a''
    mdl.hopping.apply(s.ar.data(), d.ai.data());   //  U a'   (negated below)
    mdl.hopping.apply(s.bi.data(), d.br.data());   //  U^T b'' (negated below; U symmetric)
    mdl.hopping.apply(s.br.data(), d.bi.data());   //  U^T b'
    const double g = mdl.g_over_dx;
    for (int i = 0; i < m; ++i) {
        const double arv = s.ar[static_cast<std::size_t>(i)], aiv = s.ai[static_cast<std::size_t>(i)];
        const double brv = s.br[static_cast<std::size_t>(i)], biv = s.bi[static_cast<std::size_t>(i)];
        const double nr = arv * brv - aiv * biv;
        const double ni = arv * biv + aiv * brv;
        const double kx2 = mdl.kx2[static_cast<std::size_t>(i)];
        d.ar[static_cast<std::size_t>(i)] += g * (ni * arv + nr * aiv) - kx2 * arv;
        d.ai[static_cast<std::size_t>(i)] = -d.ai[static_cast<std::size_t>(i)] - g * (nr * arv - ni * aiv) - kx2 * aiv;
        d.br[static_cast<std::size_t>(i)] = -d.br[static_cast<std::size_t>(i)] - g * (ni * brv + nr * biv) - kx2 * brv;
        d.bi[static_cast<std::size_t>(i)] += g * (nr * brv - ni * biv) - kx2 * biv;
    }
}

// Drift used by the midpoint scheme. Evaluating the noise coefficients at the
// midpoint integrates the Stratonovich form, so the Ito drift must be reduced
// by (1/2) sum_k (B_k . grad) B_k. Both corrections close in per-cell form:
//   interaction column of cell i:  (+s^2 a''_i, -s^2 a'_i, -s^2 b''_i, +s^2 b'_i),
//     s^2 = g/(2 dx)  (a pure phase rotation of alpha and beta in opposite senses);
//   measurement column:            -k~ x_i^2 (a'_i, a''_i, b'_i, b''_i),
//     which cancels the k~ x_i^2 damping in the Ito drift exactly.
inline void strat_drift(const Model& mdl, const TrajectoryState& s, TrajectoryState& d) {
    const int m = s.m();
    mdl.hopping.apply(s.ai.data(), d.ar.data());
    mdl.hopping.apply(s.ar.data(), d.ai.data());
    mdl.hopping.apply(s.bi.data(), d.br.data());
    mdl.hopping.apply(s.br.data(), d.bi.data());
    const double g = mdl.g_over_dx;
    const double s2 = mdl.strat_shift;
    for (int i = 0; i < m; ++i) {
        const double arv = s.ar[static_cast<std::size_t>(i)], aiv = s.ai[static_cast<std::size_t>(i)];
        const double brv = s.br[static_cast<std::size_t>(i)], biv = s.bi[static_cast<std::size_t>(i)];
        const double nr = arv * brv - aiv * biv;
        const double ni = arv * biv + aiv * brv;
        d.ar[static_cast<std::size_t>(i)] += g * (ni * arv + nr * aiv) - s2 * aiv;
        d.ai[static_cast<std::size_t>(i)] = -d.ai[static_cast<std::size_t>(i)] - g * (nr * arv - ni * aiv) + s2 * arv;
        d.br[static_cast<std::size_t>(i)] = -d.br[static_cast<std::size_t>(i)] - g * (ni * brv + nr * biv) + s2 * biv;
        d.bi[static_cast<std::size_t>(i)] += g * (nr * brv - ni * biv) - s2 * brv;
    }
}

// Noise increment for given Wiener increments. Each cell consumes two
// independent interaction increments (one driving the alpha pair, one the
// beta pair); the measurement increment is a single scalar shared by every
// cell, acting through the x_i-proportional column
//   (-x a''_i, +x a'_i, +x b''_i, -x b'_i) * sqrt(2 kappa_tilde).
inline void noise_increment(const Model& mdl, const TrajectoryState& s, const double* dw_int,
                            double dw_meas, TrajectoryState& out) {
    const int m = s.m();
    const double si = mdl.noise_int;
    const double sm = mdl.noise_meas;
    for (int i = 0; i < m; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double arv = s.ar[k], aiv = s.ai[k], brv = s.br[k], biv = s.bi[k];
        const double dwa = dw_int[i], dwb = dw_int[m + i];
        const double x = mdl.lattice.positions[k];
        const double wm = sm * x * dw_meas;
        out.ar[k] = si * (arv + aiv) * dwa - wm * aiv;
        out.ai[k] = si * (-arv + aiv) * dwa + wm * arv;
        out.br[k] = si * (brv - biv) * dwb + wm * biv;
        out.bi[k] = si * (brv + biv) * dwb - wm * brv;
    }
}

// Returns the index of the first cell whose |n_i| exceeds the threshold, or -1.
inline int divergence_cell(const TrajectoryState& s, double threshold) {
    const double thr2 = threshold * threshold;
    const int m = s.m();
    for (int i = 0; i < m; ++i) {
        const std::size_t k = static_cast<std::size_t>(i);
        const double nr = s.ar[k] * s.br[k] - s.ai[k] * s.bi[k];
        const double ni = s.ar[k] * s.bi[k] + s.ai[k] * s.br[k];
        const double n2 = nr * nr + ni * ni;
        if (!(n2 <= thr2)) return i;  // catches NaN as well
    }
    return -1;
}

struct StepWorkspace {
    TrajectoryState mid, drift, noise;
    std::vector<double> dw_int;

    explicit StepWorkspace(int m) {
        for (TrajectoryState* s : {&mid, &drift, &noise}) {
            s->ar.assign(static_cast<std::size_t>(m), 0.0);
            s->ai.assign(static_cast<std::size_t>(m), 0.0);
            s->br.assign(static_cast<std::size_t>(m), 0.0);
            s->bi.assign(static_cast<std::size_t>(m), 0.0);
        }
        dw_int.assign(static_cast<std::size_t>(2 * m), 0.0);
    }
};

// Draws the Wiener increments for one step. Increments are Gaussian with
// variance h; draws for a vanishing coupling are skipped, so the stream
// layout is a fixed function of (config, seed).
inline void draw_increments(const Model& mdl, GaussianStream& rng, double sqrt_h, StepWorkspace& ws,
                            double& dw_meas) {
    if (mdl.noise_int > 0.0) {
        for (double& w : ws.dw_int) w = rng.normal() * sqrt_h;
    }
    dw_meas = (mdl.noise_meas > 0.0) ? rng.normal() * sqrt_h : 0.0;
}

// One iterated-midpoint step: solve m = s + (h/2) A_strat(m) + (1/2) B(m) dW
// by fixed-point iteration (starting from s), then s <- 2m - s.
inline void step_midpoint(const Model& mdl, TrajectoryState& s, double h, int iterations,
                          const double* dw_int, double dw_meas, StepWorkspace& ws) {
    const int m = s.m();
    const std::size_t mu = static_cast<std::size_t>(m);
    for (std::size_t k = 0; k < mu; ++k) {
        ws.mid.ar[k] = s.ar[k];
        ws.mid.ai[k] = s.ai[k];
        ws.mid.br[k] = s.br[k];
        ws.mid.bi[k] = s.bi[k];
    }
    for (int it = 0; it < iterations; ++it) {
        strat_drift(mdl, ws.mid, ws.drift);
        noise_increment(mdl, ws.mid, dw_int, dw_meas, ws.noise);
        for (std::size_t k = 0; k < mu; ++k) {
            ws.mid.ar[k] = s.ar[k] + 0.5 * (h * ws.drift.ar[k] + ws.noise.ar[k]);
            ws.mid.ai[k] = s.ai[k] + 0.5 * (h * ws.drift.ai[k] + ws.noise.ai[k]);
            ws.mid.br[k] = s.br[k] + 0.5 * (h * ws.drift.br[k] + ws.noise.br[k]);
            ws.mid.bi[k] = s.bi[k] + 0.5 * (h * ws.drift.bi[k] + ws.noise.bi[k]);
        }
    }
    for (std::size_t k = 0; k < mu; ++k) {
        s.ar[k] = 2.0 * ws.mid.ar[k] - s.ar[k];
        s.ai[k] = 2.0 * ws.mid.ai[k] - s.ai[k];
        s.br[k] = 2.0 * ws.mid.br[k] - s.br[k];
        s.bi[k] = 2.0 * ws.mid.bi[k] - s.bi[k];
    }
    s.t += h;
}

// Plain Euler-Maruyama step of the Ito equations (reference integrator).
inline void step_euler_maruyama(const Model& mdl, TrajectoryState& s, double h,
                                const double* dw_int, double dw_meas, StepWorkspace& ws) {
    ito_drift(mdl, s, ws.drift);
    noise_increment(mdl, s, dw_int, dw_meas, ws.noise);
    const std::size_t mu = s.ar.size();
    for (std::size_t k = 0; k < mu; ++k) {
        s.ar[k] += h * ws.drift.ar[k] + ws.noise.ar[k];
        s.ai[k] += h * ws.drift.ai[k] + ws.noise.ai[k];
        s.br[k] += h * ws.drift.br[k] + ws.noise.br[k];
        s.bi[k] += h * ws.drift.bi[k] + ws.noise.bi[k];
    }
    s.t += h;
}

// Streaming moment sums over trajectories at one snapshot time. Physical
// observables are real; the imaginary sums are kept as a sampling diagnostic.
// Merging two accumulators adds their sums; the content is exact, only the
// floating-point reduction order depends on the worker layout.
struct EnsembleAccumulator {
    double t = 0.0;
    long long count = 0;
    int m_cells = 0;
    int center = 0;

    std::vector<double> sum_nr, sum_nr2, sum_ni, sum_ni2;  // per-cell occupation n_i
    std::vector<double> sum_qr, sum_qr2, sum_qi, sum_qi2;  // pair correlator n_c n_i
    double sum_tot = 0.0, sum_tot2 = 0.0;                  // total occupation (real part)
    double sum_toti = 0.0, sum_toti2 = 0.0;
    double sum_x1 = 0.0, sum_x12 = 0.0;                    // sum_i x_i n'_i
    double sum_x2 = 0.0, sum_x22 = 0.0;                    // sum_i x_i^2 n'_i
    double sum_dev = 0.0, sum_dev2 = 0.0;                  // per-trajectory max |beta - alpha*|

    void init(int m, double time) {
        m_cells = m;
        center = (m - 1) / 2;
        t = time;
        count = 0;
        sum_nr.assign(static_cast<std::size_t>(m), 0.0);
        sum_nr2.assign(static_cast<std::size_t>(m), 0.0);
        sum_ni.assign(static_cast<std::size_t>(m), 0.0);
        sum_ni2.assign(static_cast<std::size_t>(m), 0.0);
        sum_qr.assign(static_cast<std::size_t>(m), 0.0);
        sum_qr2.assign(static_cast<std::size_t>(m), 0.0);
        sum_qi.assign(static_cast<std::size_t>(m), 0.0);
        sum_qi2.assign(static_cast<std::size_t>(m), 0.0);
        sum_tot = sum_tot2 = sum_toti = sum_toti2 = 0.0;
        sum_x1 = sum_x12 = sum_x2 = sum_x22 = 0.0;
        sum_dev = sum_dev2 = 0.0;
    }

    void add(const TrajectoryState& s, const Lattice& lattice) {
        const int m = s.m();
        const std::size_t c = static_cast<std::size_t>(center);
        const double ncr = s.ar[c] * s.br[c] - s.ai[c] * s.bi[c];
        const double nci = s.ar[c] * s.bi[c] + s.ai[c] * s.br[c];
        double tot = 0.0, toti = 0.0, x1 = 0.0, x2 = 0.0, dev2max = 0.0;
        for (int i = 0; i < m; ++i) {
            const std::size_t k = static_cast<std::size_t>(i);
            const double nr = s.ar[k] * s.br[k] - s.ai[k] * s.bi[k];
            const double ni = s.ar[k] * s.bi[k] + s.ai[k] * s.br[k];
            sum_nr[k] += nr;
            sum_nr2[k] += nr * nr;
            sum_ni[k] += ni;
            sum_ni2[k] += ni * ni;
            const double qr = ncr * nr - nci * ni;
            const double qi = ncr * ni + nci * nr;
            sum_qr[k] += qr;
            sum_qr2[k] += qr * qr;
            sum_qi[k] += qi;
            sum_qi2[k] += qi * qi;
            const double x = lattice.positions[k];
            tot += nr;
            toti += ni;
            x1 += x * nr;
            x2 += x * x * nr;
            const double dr = s.br[k] - s.ar[k];
            const double di = s.bi[k] + s.ai[k];
            dev2max = std::max(dev2max, dr * dr + di * di);
        }
        sum_tot += tot;
        sum_tot2 += tot * tot;
        sum_toti += toti;
        sum_toti2 += toti * toti;
        sum_x1 += x1;
        sum_x12 += x1 * x1;
        sum_x2 += x2;
        sum_x22 += x2 * x2;
        const double dev = std::sqrt(dev2max);
        sum_dev += dev;
        sum_dev2 += dev * dev;
        ++count;
    }

    void merge(const EnsembleAccumulator& o) {
        if (o.m_cells != m_cells) throw std::invalid_argument("accumulator merge: size mismatch");
        count += o.count;
        for (std::size_t k = 0; k < sum_nr.size(); ++k) {
            sum_nr[k] += o.sum_nr[k];
            sum_nr2[k] += o.sum_nr2[k];
            sum_ni[k] += o.sum_ni[k];
            sum_ni2[k] += o.sum_ni2[k];
            sum_qr[k] += o.sum_qr[k];
            sum_qr2[k] += o.sum_qr2[k];
            sum_qi[k] += o.sum_qi[k];
            sum_qi2[k] += o.sum_qi2[k];
        }
        sum_tot += o.sum_tot;
        sum_tot2 += o.sum_tot2;
        sum_toti += o.sum_toti;
        sum_toti2 += o.sum_toti2;
        sum_x1 += o.sum_x1;
        sum_x12 += o.sum_x12;
        sum_x2 += o.sum_x2;
        sum_x22 += o.sum_x22;
        sum_dev += o.sum_dev;
        sum_dev2 += o.sum_dev2;
    }

    static double mean_of(double sum, long long n) { return sum / static_cast<double>(n); }
    static double stderr_of(double sum, double sum2, long long n) {
        if (n < 2) return 0.0;
        const double mean = sum / static_cast<double>(n);
        double var = (sum2 - static_cast<double>(n) * mean * mean) / static_cast<double>(n - 1);
        if (var < 0.0) var = 0.0;
        return std::sqrt(var / static_cast<double>(n));
    }

    double mean_nr(int i) const { return mean_of(sum_nr[static_cast<std::size_t>(i)], count); }
    double stderr_nr(int i) const {
        return stderr_of(sum_nr[static_cast<std::size_t>(i)], sum_nr2[static_cast<std::size_t>(i)], count);
    }
    double mean_ni(int i) const { return mean_of(sum_ni[static_cast<std::size_t>(i)], count); }
    double stderr_ni(int i) const {
        return stderr_of(sum_ni[static_cast<std::size_t>(i)], sum_ni2[static_cast<std::size_t>(i)], count);
    }
    double mean_qr(int i) const { return mean_of(sum_qr[static_cast<std::size_t>(i)], count); }
    double stderr_qr(int i) const {
        return stderr_of(sum_qr[static_cast<std::size_t>(i)], sum_qr2[static_cast<std::size_t>(i)], count);
    }
    double total_number() const { return mean_of(sum_tot, count); }
    double total_number_stderr() const { return stderr_of(sum_tot, sum_tot2, count); }
    double mean_beta_deviation() const { return mean_of(sum_dev, count); }

    // Largest |Im|/|Re| over the accumulated occupations (sampling diagnostic).
    double imaginary_fraction() const {
        double worst = 0.0;
        for (std::size_t k = 0; k < sum_nr.size(); ++k) {
            const double re = std::abs(sum_nr[k]);
            if (re > 0.0) worst = std::max(worst, std::abs(sum_ni[k]) / re);
        }
        return worst;
    }
};

struct EnsembleOptions {
    int threads = 0;             // 0 = hardware concurrency
    long first_trajectory = 0;   // offset into the seed space (checkpoint resume)
    bool use_euler_maruyama = false;  // reference integrator instead of midpoint
};

// Integrates config.n_trajectories independent trajectories from the coherent
// state of `gs` and accumulates moments at each requested snapshot time.
// Trajectory j uses the generator derived from (config.seed, j), so results do
// not depend on the worker layout except through floating-point merge order.
// Any divergence aborts the whole run: discarding trajectories would bias the
// averages, so the caller must shorten the horizon or reduce couplings instead.
inline std::vector<EnsembleAccumulator> run_ensemble(const GroundState& gs,
                                                     const PhysicalParams& params,
                                                     const Lattice& lattice, const SimConfig& config,
                                                     const std::vector<double>& snapshot_times,
                                                     const EnsembleOptions& opts = {}) {
    config.validate();
    const Model mdl = make_model(params, lattice);
    const long n_steps = std::max<long>(1, std::lround(config.t_final / config.dt));
    const double h = config.t_final / static_cast<double>(n_steps);
    const double sqrt_h = std::sqrt(h);
    const double threshold = config.divergence_threshold > 0.0 ? config.divergence_threshold
                                                               : 1e3 * params.n_atoms;

    std::vector<long> snap_step(snapshot_times.size());
    for (std::size_t s = 0; s < snapshot_times.size(); ++s) {
        const double ts = snapshot_times[s];
        if (ts < -1e-12 || ts > config.t_final + 1e-12)
            throw std::invalid_argument("run_ensemble: snapshot time outside [0, t_final]");
        if (s > 0 && ts < snapshot_times[s - 1])
            throw std::invalid_argument("run_ensemble: snapshot times must be sorted");
        snap_step[s] = std::min<long>(n_steps, std::max<long>(0, std::lround(ts / h)));
    }

    const TrajectoryState base = init_coherent(gs, lattice);

    int n_workers = opts.threads > 0 ? opts.threads
                                     : static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    n_workers = static_cast<int>(std::min<long>(n_workers, config.n_trajectories));

    std::vector<std::vector<EnsembleAccumulator>> local(
        static_cast<std::size_t>(n_workers), std::vector<EnsembleAccumulator>(snapshot_times.size()));
    for (auto& accs : local)
        for (std::size_t s = 0; s < accs.size(); ++s) accs[s].init(lattice.m_cells, snapshot_times[s]);

    std::atomic<bool> abort{false};
    std::mutex fail_mutex;
    long fail_trajectory = -1;
    double fail_time = 0.0;

    auto worker = [&](int w, long lo, long hi) {
        StepWorkspace ws(lattice.m_cells);
        TrajectoryState s;
        auto& accs = local[static_cast<std::size_t>(w)];
        for (long j = lo; j < hi && !abort.load(std::memory_order_relaxed); ++j) {
            GaussianStream rng = trajectory_stream(config.seed, static_cast<std::uint64_t>(j + opts.first_trajectory));
            s = base;
            std::size_t next_snap = 0;
            for (long step = 0; step <= n_steps; ++step) {
                while (next_snap < snap_step.size() && snap_step[next_snap] == step) {
                    accs[next_snap].add(s, lattice);
                    ++next_snap;
                }
                if (step == n_steps) break;
                double dw_meas = 0.0;
                draw_increments(mdl, rng, sqrt_h, ws, dw_meas);
                if (opts.use_euler_maruyama)
                    step_euler_maruyama(mdl, s, h, ws.dw_int.data(), dw_meas, ws);
                else
                    step_midpoint(mdl, s, h, config.implicit_iterations, ws.dw_int.data(), dw_meas, ws);
                if (divergence_cell(s, threshold) >= 0) {
                    std::lock_guard<std::mutex> lock(fail_mutex);
                    if (fail_trajectory < 0 || j + opts.first_trajectory < fail_trajectory) {
                        fail_trajectory = j + opts.first_trajectory;
                        fail_time = s.t;
                    }
                    abort.store(true, std::memory_order_relaxed);
                    return;
                }
            }
        }
    };

    if (n_workers == 1) {
        worker(0, 0, config.n_trajectories);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(n_workers));
        const long per = config.n_trajectories / n_workers;
        const long extra = config.n_trajectories % n_workers;
        long lo = 0;
        for (int w = 0; w < n_workers; ++w) {
            const long hi = lo + per + (w < extra ? 1 : 0);
            pool.emplace_back(worker, w, lo, hi);
            lo = hi;
        }
        for (auto& th : pool) th.join();
    }

    if (abort.load()) throw DivergenceError(fail_trajectory, fail_time);

    std::vector<EnsembleAccumulator> out = std::move(local[0]);
    for (int w = 1; w < n_workers; ++w)
        for (std::size_t s = 0; s < out.size(); ++s) out[s].merge(local[static_cast<std::size_t>(w)][s]);
    return out;
}

}  // namespace cmbec

#endif
