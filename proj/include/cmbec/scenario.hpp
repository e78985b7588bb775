#ifndef CMBEC_SCENARIO_HPP
#define CMBEC_SCENARIO_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmbec/checkpoint.hpp"
#include "cmbec/csv.hpp"
#include "cmbec/gpe.hpp"
#include "cmbec/lattice.hpp"
#include "cmbec/meanfield.hpp"
#include "cmbec/observables.hpp"
#include "cmbec/oracle.hpp"
#include "cmbec/params.hpp"
#include "cmbec/positivep.hpp"

namespace cmbec {

inline constexpr const char* kVersion = "0.1.0";

class ScenarioError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class OracleMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Mode { gpe, meanfield, positivep, compare, oracle_check };

inline Mode parse_mode(const std::string& s) {
    if (s == "gpe") return Mode::gpe;
    if (s == "meanfield") return Mode::meanfield;
    if (s == "positivep") return Mode::positivep;
    if (s == "compare") return Mode::compare;
    if (s == "oracle-check") return Mode::oracle_check;
    throw ScenarioError("unknown mode '" + s + "' (expected gpe|meanfield|positivep|compare|oracle-check)");
}

inline const char* mode_name(Mode m) {
    switch (m) {
        case Mode::gpe: return "gpe";
        case Mode::meanfield: return "meanfield";
        case Mode::positivep: return "positivep";
        case Mode::compare: return "compare";
        case Mode::oracle_check: return "oracle-check";
    }
    return "?";
}

// Full run description. Defaults reproduce the production setup: dx = 0.33,
// dt = 1e-4, 20000 trajectories, horizon = quarter trap period.
struct Scenario {
    Mode mode = Mode::positivep;
    double n_atoms = 100.0;
    double g1d_n = 1.0;  // interaction strength g1d * N
    double kappa_tilde = 5.0;
    int m_cells = 45;
    double dx = 0.33;
    SimConfig sim;
    std::vector<double> snapshots;  // defaults to {0, t_final}
    std::vector<double> g1d_n_values;
    std::vector<double> kappa_values;
    MomentForm meanfield_form = MomentForm::restoring_x4;
    double density_floor = 1e-3;
    std::string out_dir = "out";
    int threads = 0;
    bool resume = false;
    bool trajectories_explicit = false;  // set when the config names a count

    PhysicalParams params() const {
        PhysicalParams p;
        p.n_atoms = n_atoms;
        p.g1d = g1d_n / n_atoms;
        p.kappa_tilde = kappa_tilde;
        return p;
    }
    Lattice lattice() const { return build_lattice(m_cells, dx); }
};

namespace detail {

template <typename T>
inline void read_if(const nlohmann::json& j, const char* key, T& dst) {
    if (!j.contains(key)) return;
    try {
        dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError(std::string("config: bad value for '") + key + "': " + e.what());
    }
}

inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace detail

// Hash of every field that affects the computed numbers (not output paths).
inline std::uint64_t config_hash(const Scenario& s) {
    std::ostringstream o;
    o.precision(17);
    o << mode_name(s.mode) << '|' << s.n_atoms << '|' << s.g1d_n << '|' << s.kappa_tilde << '|'
      << s.m_cells << '|' << s.dx << '|' << s.sim.dt << '|' << s.sim.n_trajectories << '|'
      << s.sim.t_final << '|' << s.sim.seed << '|' << s.sim.implicit_iterations << '|'
      << s.sim.divergence_threshold << '|' << static_cast<int>(s.meanfield_form) << '|'
      << s.density_floor << '|';
    for (double v : s.snapshots) o << v << ',';
    o << '|';
    for (double v : s.g1d_n_values) o << v << ',';
    o << '|';
    for (double v : s.kappa_values) o << v << ',';
    return detail::fnv1a(o.str());
}

inline Scenario parse_scenario_json(const nlohmann::json& j) {
    Scenario s;
    if (!j.is_object()) throw ScenarioError("config: top level must be a JSON object");
    if (j.contains("mode")) {
        if (!j.at("mode").is_string()) throw ScenarioError("config: 'mode' must be a string");
        s.mode = parse_mode(j.at("mode").get<std::string>());
    }
    static const std::vector<std::string> known = {
        "mode", "n_atoms", "g1d_n", "kappa_tilde", "m_cells", "dx", "dt", "trajectories",
        "t_final", "seed", "implicit_iterations", "divergence_threshold", "snapshots",
        "g1d_n_values", "kappa_values", "meanfield_variant", "density_floor", "out_dir",
        "threads", "resume"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            throw ScenarioError("config: unknown key '" + it.key() + "'");

    detail::read_if(j, "n_atoms", s.n_atoms);
    detail::read_if(j, "g1d_n", s.g1d_n);
    detail::read_if(j, "kappa_tilde", s.kappa_tilde);
    detail::read_if(j, "m_cells", s.m_cells);
    detail::read_if(j, "dx", s.dx);
    detail::read_if(j, "dt", s.sim.dt);
    detail::read_if(j, "trajectories", s.sim.n_trajectories);
    s.trajectories_explicit = j.contains("trajectories");
    detail::read_if(j, "t_final", s.sim.t_final);
    detail::read_if(j, "seed", s.sim.seed);
    detail::read_if(j, "implicit_iterations", s.sim.implicit_iterations);
    detail::read_if(j, "divergence_threshold", s.sim.divergence_threshold);
    detail::read_if(j, "snapshots", s.snapshots);
    detail::read_if(j, "g1d_n_values", s.g1d_n_values);
    detail::read_if(j, "kappa_values", s.kappa_values);
    detail::read_if(j, "density_floor", s.density_floor);
    detail::read_if(j, "out_dir", s.out_dir);
    detail::read_if(j, "threads", s.threads);
    detail::read_if(j, "resume", s.resume);
    if (j.contains("meanfield_variant")) {
        const std::string v = j.at("meanfield_variant").get<std::string>();
        if (v == "restoring4")
            s.meanfield_form = MomentForm::restoring_x4;
        else if (v == "restoring2")
            s.meanfield_form = MomentForm::restoring_x2;
        else
            throw ScenarioError("config: meanfield_variant must be restoring4 or restoring2");
    }
    return s;
}

inline Scenario parse_scenario_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ScenarioError("config: cannot open " + path);
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ScenarioError("config: JSON parse error in " + path + ": " + e.what());
    }
    return parse_scenario_json(j);
}

// Validates mode-specific requirements before any compute.
inline void validate_scenario(Scenario& s) {
    try {
        s.params().validate();
        s.sim.validate();
        (void)s.lattice();
    } catch (const std::exception& e) {
        throw ScenarioError(std::string("config: ") + e.what());
    }
    if (s.g1d_n < 0.0) throw ScenarioError("config: g1d_n must be nonnegative");
    if (!(s.density_floor > 0.0)) throw ScenarioError("config: density_floor must be positive");
    if (s.threads < 0) throw ScenarioError("config: threads must be >= 0");
    // grid must hold the bare-oscillator cloud; interacting clouds are
    // re-checked against the Thomas-Fermi radius after the GPE solve
    const Lattice lat = s.lattice();
    if ((s.mode == Mode::positivep || s.mode == Mode::compare || s.mode == Mode::gpe) &&
        !lat.covers(std::sqrt(0.5)))
        throw ScenarioError("config: lattice half-span " + std::to_string(lat.half_span()) +
                            " does not cover 6 ground-state standard deviations");
    if (s.snapshots.empty()) s.snapshots = {0.0, s.sim.t_final};
    for (std::size_t i = 0; i < s.snapshots.size(); ++i) {
        if (s.snapshots[i] < 0.0 || s.snapshots[i] > s.sim.t_final + 1e-12)
            throw ScenarioError("config: snapshot times must lie in [0, t_final]");
        if (i > 0 && s.snapshots[i] < s.snapshots[i - 1])
            throw ScenarioError("config: snapshot times must be sorted");
    }
    if (s.mode == Mode::oracle_check && !s.trajectories_explicit)
        s.sim.n_trajectories = 100000;  // the equivalence gate needs tight sampling errors
    if ((s.mode == Mode::compare || s.mode == Mode::meanfield) && s.g1d_n_values.empty())
        s.g1d_n_values = {0.0, 1.0, 2.0, 4.0, 7.0, 10.0};
    if ((s.mode == Mode::compare || s.mode == Mode::meanfield) && s.kappa_values.empty())
        s.kappa_values = {1.0, 5.0};
    for (double g : s.g1d_n_values)
        if (g < 0.0) throw ScenarioError("config: g1d_n_values must be nonnegative");
    for (double k : s.kappa_values)
        if (k < 0.0) throw ScenarioError("config: kappa_values must be nonnegative");
}

// ---------------------------------------------------------------------------
// CSV emission (one file per figure-style data set)
// ---------------------------------------------------------------------------

inline void write_ground_state_csv(const std::string& path, const Lattice& lat,
                                   const GroundState& gs) {
    CsvWriter w(path, {"x", "phi", "density"});
    const std::vector<double> n = ground_state_density(gs, lat);
    for (int i = 0; i < lat.m_cells; ++i)
        w.row({lat.positions[static_cast<std::size_t>(i)], gs.amplitudes[static_cast<std::size_t>(i)],
               n[static_cast<std::size_t>(i)]});
}

inline void write_moments_csv(const std::string& path, const MomentSeries& series) {
    CsvWriter w(path, {"t", "var_x", "var_p", "cov_xp"});
    for (std::size_t k = 0; k < series.t.size(); ++k)
        w.row({series.t[k], series.states[k].var_x, series.states[k].var_p, series.states[k].cov_xp});
}

struct EtaRow {
    double g1d_n, kappa_tilde, eta, eta_stderr;
    std::string tier;  // "meanfield" or "positivep"
};

inline void write_eta_csv(const std::string& path, const std::vector<EtaRow>& rows) {
    CsvWriter w(path, {"g1dN", "kappa_tilde", "eta", "eta_stderr", "tier"});
    for (const auto& r : rows)
        w.raw_row(format_double(r.g1d_n) + "," + format_double(r.kappa_tilde) + "," +
                  format_double(r.eta) + "," + format_double(r.eta_stderr) + "," + r.tier);
}

inline void write_density_csv(const std::string& path, const DensityProfile& p) {
    CsvWriter w(path, {"x", "density", "density_stderr"});
    for (std::size_t i = 0; i < p.x.size(); ++i) w.row({p.x[i], p.n[i], p.stderr_n[i]});
}

inline void write_density_compare_csv(const std::string& path, const DensityProfile& meas,
                                      const DensityProfile& nomeas) {
    CsvWriter w(path, {"x", "n_meas", "n_meas_err", "n_nomeas", "n_nomeas_err"});
    for (std::size_t i = 0; i < meas.x.size(); ++i)
        w.row({meas.x[i], meas.n[i], meas.stderr_n[i], nomeas.n[i], nomeas.stderr_n[i]});
}

inline void write_g2_csv(const std::string& path, const G2Curve& c) {
    CsvWriter w(path, {"x", "g2", "g2_err", "valid"});
    for (std::size_t i = 0; i < c.x.size(); ++i)
        w.row({c.x[i], c.g2[i], c.stderr_g2[i], c.valid[i] ? 1.0 : 0.0});
}

// ---------------------------------------------------------------------------
// Small-instance equivalence suite: the stochastic tier against the dense
// Fock-space oracle on a 3-cell lattice with both couplings active.
// ---------------------------------------------------------------------------

struct SmallInstance {
    PhysicalParams params;
    Lattice lattice;
    FockConfig fock;
    std::vector<std::complex<double>> alpha0;  // cell amplitudes, sum |a|^2 = N
    double t_final = 0.1;

    GroundState as_ground_state() const {
        GroundState gs;
        gs.amplitudes.resize(alpha0.size());
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t i = 0; i < alpha0.size(); ++i) {
            gs.amplitudes[i] = alpha0[i].real() / std::sqrt(lattice.dx);
            const double n = std::norm(alpha0[i]);
            m1 += lattice.positions[i] * n;
            m2 += lattice.positions[i] * lattice.positions[i] * n;
        }
        gs.variance = m2 / params.n_atoms - (m1 / params.n_atoms) * (m1 / params.n_atoms);
        return gs;
    }
};

inline SmallInstance small_instance() {
    SmallInstance si;
    si.params.n_atoms = 2.0;
    si.params.g1d = 0.5;
    si.params.kappa_tilde = 0.5;
    si.lattice = build_lattice(3, 3.0);
    si.fock.m_cells = 3;
    si.fock.n_max = 9;
    const double side = std::sqrt(0.4), center = std::sqrt(1.2);
    si.alpha0 = {side, center, side};
    si.t_final = 0.1;
    return si;
}

struct EquivalenceReport {
    bool pass = true;
    std::vector<std::string> lines;  // one per compared observable
    FockExpectations oracle;
    std::vector<double> pp_n, pp_n_err;
    double pp_q = 0.0, pp_q_err = 0.0;
};

// Runs the positive-P ensemble on the small instance and compares per-cell
// occupations and the central pair correlator against the oracle at
// 3 sampling standard errors.
inline EquivalenceReport run_equivalence_suite(long n_trajectories, std::uint64_t seed, int threads,
                                               double dt = 1e-4, bool euler_maruyama = false) {
    const SmallInstance si = small_instance();
    EquivalenceReport rep;
    rep.oracle = master_equation_evolve(si.fock, si.params, si.lattice, si.alpha0, si.t_final);

    SimConfig cfg;
    cfg.dt = dt;
    cfg.n_trajectories = n_trajectories;
    cfg.t_final = si.t_final;
    cfg.seed = seed;
    EnsembleOptions opts;
    opts.threads = threads;
    opts.use_euler_maruyama = euler_maruyama;
    const GroundState gs = si.as_ground_state();
    const auto accs = run_ensemble(gs, si.params, si.lattice, cfg, {si.t_final}, opts);
    const EnsembleAccumulator& acc = accs.back();

    const int m = si.lattice.m_cells;
    const int c = si.lattice.center_cell();
    char buf[160];
    for (int i = 0; i < m; ++i) {
        const double est = acc.mean_nr(i), err = acc.stderr_nr(i);
        const double ref = rep.oracle.n[static_cast<std::size_t>(i)];
        const bool ok = std::abs(est - ref) <= 3.0 * err;
        std::snprintf(buf, sizeof buf, "n_%d: oracle %.6f, positive-P %.6f +- %.6f (%.2f sigma) %s",
                      i, ref, est, err, err > 0 ? std::abs(est - ref) / err : 0.0,
                      ok ? "ok" : "MISMATCH");
        rep.lines.emplace_back(buf);
        rep.pass = rep.pass && ok;
        rep.pp_n.push_back(est);
        rep.pp_n_err.push_back(err);
    }
    rep.pp_q = acc.mean_qr(c);
    rep.pp_q_err = acc.stderr_qr(c);
    const double qref = rep.oracle.g2_num[static_cast<std::size_t>(c)];
    const bool qok = std::abs(rep.pp_q - qref) <= 3.0 * rep.pp_q_err;
    std::snprintf(buf, sizeof buf, "g2num_c: oracle %.6f, positive-P %.6f +- %.6f (%.2f sigma) %s",
                  qref, rep.pp_q, rep.pp_q_err,
                  rep.pp_q_err > 0 ? std::abs(rep.pp_q - qref) / rep.pp_q_err : 0.0,
                  qok ? "ok" : "MISMATCH");
    rep.lines.emplace_back(buf);
    rep.pass = rep.pass && qok;
    return rep;
}

// ---------------------------------------------------------------------------
// Mode runners
// ---------------------------------------------------------------------------

struct RunOutputs {
    std::vector<std::string> files;
    std::optional<DivergenceError> divergence;
};

inline void write_manifest(const Scenario& s, const RunOutputs& out, double wall_seconds) {
    nlohmann::json j;
    j["mode"] = mode_name(s.mode);
    j["version"] = kVersion;
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash(s)));
    j["config_hash"] = hash;
    j["seed"] = s.sim.seed;
    j["threads"] = s.threads;
    j["n_atoms"] = s.n_atoms;
    j["g1d_n"] = s.g1d_n;
    j["kappa_tilde"] = s.kappa_tilde;
    j["m_cells"] = s.m_cells;
    j["dx"] = s.dx;
    j["dt"] = s.sim.dt;
    j["trajectories"] = s.sim.n_trajectories;
    j["t_final"] = s.sim.t_final;
    j["implicit_iterations"] = s.sim.implicit_iterations;
    j["snapshots"] = s.snapshots;
    j["g1d_n_values"] = s.g1d_n_values;
    j["kappa_values"] = s.kappa_values;
    j["wall_seconds"] = wall_seconds;
    j["files"] = out.files;
    if (out.divergence)
        j["divergence"] = {{"trajectory", out.divergence->trajectory}, {"time", out.divergence->time}};
    else
        j["divergence"] = nullptr;
    std::ofstream f(std::filesystem::path(s.out_dir) / "manifest.json");
    f << j.dump(2) << '\n';
}

inline std::string num_tag(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

namespace detail {

inline void run_gpe_mode(const Scenario& s, RunOutputs& out) {
    const Lattice lat = s.lattice();
    const GroundState gs = solve_ground_state(lat, s.params());
    const auto path = (std::filesystem::path(s.out_dir) / "ground_state.csv").string();
    write_ground_state_csv(path, lat, gs);
    out.files.push_back(path);
    std::cout << "gpe: mu = " << gs.chemical_potential << ", variance = " << gs.variance << "\n";
}

inline void run_meanfield_mode(const Scenario& s, RunOutputs& out) {
    EtaSweepOptions opts;
    opts.m_cells = s.m_cells;
    opts.dx = s.dx;
    opts.n_atoms = s.n_atoms;
    opts.dt = s.sim.dt;
    opts.form = s.meanfield_form;
    const auto table = eta_sweep(s.g1d_n_values, s.kappa_values, s.sim.t_final, opts);
    std::vector<EtaRow> rows;
    for (const auto& cell : table) {
        if (!cell.ok) {
            std::cerr << "meanfield cell (g1dN=" << cell.g1d_n << ", kappa=" << cell.kappa_tilde
                      << ") failed: " << cell.error << "\n";
            continue;
        }
        rows.push_back({cell.g1d_n, cell.kappa_tilde, cell.eta, 0.0, "meanfield"});
    }
    const auto path = (std::filesystem::path(s.out_dir) / "eta_meanfield.csv").string();
    write_eta_csv(path, rows);
    out.files.push_back(path);

    // time series for the scalar (g1d_n, kappa_tilde) point
    const Lattice lat = build_lattice(s.m_cells, s.dx);
    PhysicalParams p = s.params();
    const GroundState gs = solve_ground_state(lat, p);
    MomentState init{gs.variance, 0.25 / gs.variance, 0.0};
    const MomentSeries series = integrate_moments(init, p, s.sim.t_final, s.sim.dt, s.meanfield_form);
    const auto mpath = (std::filesystem::path(s.out_dir) / "moments.csv").string();
    write_moments_csv(mpath, series);
    out.files.push_back(mpath);
}

inline void run_positivep_mode(const Scenario& s, RunOutputs& out) {
    const Lattice lat = s.lattice();
    const PhysicalParams p = s.params();
    const GroundState gs = solve_ground_state(lat, p);

    SimConfig cfg = s.sim;
    EnsembleOptions eopts;
    eopts.threads = s.threads;
    std::vector<EnsembleAccumulator> accs;
    const auto ck_path = (std::filesystem::path(s.out_dir) / "checkpoint.bin").string();
    const std::uint64_t hash = config_hash(s);
    if (s.resume && std::filesystem::exists(ck_path)) {
        Checkpoint ck = load_checkpoint(ck_path);
        if (ck.config_hash != hash)
            throw ScenarioError("resume: checkpoint config hash does not match this scenario");
        const long done = static_cast<long>(ck.accumulators.front().count);
        if (done >= s.sim.n_trajectories) {
            accs = std::move(ck.accumulators);
        } else {
            eopts.first_trajectory = done;
            cfg.n_trajectories = s.sim.n_trajectories - done;
            accs = run_ensemble(gs, p, lat, cfg, s.snapshots, eopts);
            for (std::size_t i = 0; i < accs.size(); ++i) accs[i].merge(ck.accumulators[i]);
        }
    } else {
        accs = run_ensemble(gs, p, lat, cfg, s.snapshots, eopts);
    }
    save_checkpoint(ck_path, hash, accs);
    out.files.push_back(ck_path);

    CsvWriter summary((std::filesystem::path(s.out_dir) / "summary.csv").string(),
                      {"t", "cloud_variance", "cloud_variance_err", "total_number",
                       "total_number_err", "beta_deviation", "imag_fraction"});
    for (const auto& acc : accs) {
        const ValueWithError v = cloud_variance(acc);
        summary.row({acc.t, v.value, v.stderr_v, acc.total_number(), acc.total_number_stderr(),
                     acc.mean_beta_deviation(), acc.imaginary_fraction()});
        const auto dpath =
            (std::filesystem::path(s.out_dir) / ("density_t" + num_tag(acc.t) + ".csv")).string();
        write_density_csv(dpath, density_profile(acc, lat));
        out.files.push_back(dpath);
        if (lat.has_center_cell()) {
            const auto gpath =
                (std::filesystem::path(s.out_dir) / ("g2_t" + num_tag(acc.t) + ".csv")).string();
            write_g2_csv(gpath, g2_curve(acc, lat, s.density_floor));
            out.files.push_back(gpath);
        }
    }
    out.files.push_back((std::filesystem::path(s.out_dir) / "summary.csv").string());
}

inline void run_compare_mode(const Scenario& s, RunOutputs& out) {
    const Lattice lat = s.lattice();
    std::vector<EtaRow> rows;

    EtaSweepOptions mf;
    mf.m_cells = s.m_cells;
    mf.dx = s.dx;
    mf.n_atoms = s.n_atoms;
    mf.dt = std::min(s.sim.dt, 1e-3);
    mf.form = s.meanfield_form;
    for (const auto& cell : eta_sweep(s.g1d_n_values, s.kappa_values, s.sim.t_final, mf))
        if (cell.ok) rows.push_back({cell.g1d_n, cell.kappa_tilde, cell.eta, 0.0, "meanfield"});

    EnsembleOptions eopts;
    eopts.threads = s.threads;
    for (double gn : s.g1d_n_values) {
        PhysicalParams p;
        p.n_atoms = s.n_atoms;
        p.g1d = gn / s.n_atoms;
        const GroundState gs = solve_ground_state(lat, p);

        p.kappa_tilde = 0.0;
        SimConfig cfg = s.sim;
        const auto ref = run_ensemble(gs, p, lat, cfg, {cfg.t_final}, eopts);
        const ValueWithError v_ref = cloud_variance(ref.back());
        const DensityProfile prof_ref = density_profile(ref.back(), lat);

        for (double kappa : s.kappa_values) {
            p.kappa_tilde = kappa;
            cfg.seed = s.sim.seed + static_cast<std::uint64_t>(1000 * kappa) + 1;
            const auto meas = run_ensemble(gs, p, lat, cfg, {cfg.t_final}, eopts);
            const ValueWithError v_meas = cloud_variance(meas.back());
            const ValueWithError eta = eta_from_runs(v_meas, v_ref);
            rows.push_back({gn, kappa, eta.value, eta.stderr_v, "positivep"});

            const std::string tag = "_g" + num_tag(gn) + "_k" + num_tag(kappa);
            const auto dpath = (std::filesystem::path(s.out_dir) / ("density" + tag + ".csv")).string();
            write_density_compare_csv(dpath, density_profile(meas.back(), lat), prof_ref);
            out.files.push_back(dpath);
            if (lat.has_center_cell()) {
                const auto gpath = (std::filesystem::path(s.out_dir) / ("g2" + tag + ".csv")).string();
                write_g2_csv(gpath, g2_curve(meas.back(), lat, s.density_floor));
                out.files.push_back(gpath);
            }
        }
    }
    const auto epath = (std::filesystem::path(s.out_dir) / "eta_compare.csv").string();
    write_eta_csv(epath, rows);
    out.files.push_back(epath);
}

inline void run_oracle_check_mode(const Scenario& s, RunOutputs& out) {
    const EquivalenceReport rep =
        run_equivalence_suite(s.sim.n_trajectories, s.sim.seed, s.threads, s.sim.dt);
    for (const auto& line : rep.lines) std::cout << line << "\n";

    // archived oracle values, regenerated on every check
    const auto fpath = (std::filesystem::path(s.out_dir) / "oracle_reference.csv").string();
    {
        CsvWriter w(fpath, {"key", "value"});
        const int m = static_cast<int>(rep.oracle.n.size());
        for (int i = 0; i < m; ++i)
            w.raw_row("n_" + std::to_string(i) + "," + format_double(rep.oracle.n[static_cast<std::size_t>(i)]));
        for (int i = 0; i < m; ++i)
            w.raw_row("g2num_" + std::to_string(i) + "," +
                      format_double(rep.oracle.g2_num[static_cast<std::size_t>(i)]));
        w.raw_row("x_mean," + format_double(rep.oracle.x_mean));
        w.raw_row("x2_mean," + format_double(rep.oracle.x2_mean));
        w.raw_row("truncation_loss," + format_double(rep.oracle.truncation_loss));
        w.raw_row("rk4_step," + format_double(rep.oracle.step_used));
    }
    out.files.push_back(fpath);
    if (!rep.pass) throw OracleMismatch("positive-P ensemble disagrees with the Fock oracle");
}

}  // namespace detail

// Executes the scenario and writes outputs plus a manifest into out_dir.
// Throws ScenarioError (bad config), DivergenceError (exploding trajectory,
// manifest still written) or OracleMismatch (oracle-check failure).
inline void run_scenario(Scenario s) {
    validate_scenario(s);
    std::filesystem::create_directories(s.out_dir);
    RunOutputs out;
    const auto start = std::chrono::steady_clock::now();
    auto elapsed = [&] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    };
    try {
        switch (s.mode) {
            case Mode::gpe: detail::run_gpe_mode(s, out); break;
            case Mode::meanfield: detail::run_meanfield_mode(s, out); break;
            case Mode::positivep: detail::run_positivep_mode(s, out); break;
            case Mode::compare: detail::run_compare_mode(s, out); break;
            case Mode::oracle_check: detail::run_oracle_check_mode(s, out); break;
        }
    } catch (const DivergenceError& e) {
        out.divergence = e;
        write_manifest(s, out, elapsed());
        throw;
    }
    write_manifest(s, out, elapsed());
}

}  // namespace cmbec

#endif
