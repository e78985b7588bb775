#ifndef CMBEC_CHECKPOINT_HPP
#define CMBEC_CHECKPOINT_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cmbec/positivep.hpp"

namespace cmbec {

// Binary accumulator checkpoint for resumable ensemble runs.
//
// Fixed little-endian layout (this code assumes a little-endian host):
//   bytes 0..7    magic "CMBECCK1"
//   u64           config hash
//   u64           m_cells
//   u64           number of snapshots
// then per snapshot:
//   f64           snapshot time
//   u64           trajectory count
//   f64 * (8*M)   per-cell sums: nr, nr2, ni, ni2, qr, qr2, qi, qi2 (cell-major per array)
//   f64 * 12      tot, tot2, toti, toti2, x1, x12, x2, x22, dev, dev2, reserved, reserved

namespace detail {
inline void put_u64(std::ofstream& f, std::uint64_t v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline void put_f64(std::ofstream& f, double v) { f.write(reinterpret_cast<const char*>(&v), 8); }
inline std::uint64_t get_u64(std::ifstream& f) {
    std::uint64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
inline double get_f64(std::ifstream& f) {
    double v = 0;
    f.read(reinterpret_cast<char*>(&v), 8);
    return v;
}
}  // namespace detail

inline void save_checkpoint(const std::string& path, std::uint64_t config_hash,
                            const std::vector<EnsembleAccumulator>& accs) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f.write("CMBECCK1", 8);
    detail::put_u64(f, config_hash);
    detail::put_u64(f, accs.empty() ? 0 : static_cast<std::uint64_t>(accs.front().m_cells));
    detail::put_u64(f, static_cast<std::uint64_t>(accs.size()));
    for (const auto& a : accs) {
        detail::put_f64(f, a.t);
        detail::put_u64(f, static_cast<std::uint64_t>(a.count));
        for (const auto* v : {&a.sum_nr, &a.sum_nr2, &a.sum_ni, &a.sum_ni2, &a.sum_qr, &a.sum_qr2,
                              &a.sum_qi, &a.sum_qi2})
            for (double x : *v) detail::put_f64(f, x);
        for (double x : {a.sum_tot, a.sum_tot2, a.sum_toti, a.sum_toti2, a.sum_x1, a.sum_x12,
                         a.sum_x2, a.sum_x22, a.sum_dev, a.sum_dev2, 0.0, 0.0})
            detail::put_f64(f, x);
    }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

struct Checkpoint {
    std::uint64_t config_hash = 0;
    std::vector<EnsembleAccumulator> accumulators;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, "CMBECCK1", 8) != 0)
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint ck;
    ck.config_hash = detail::get_u64(f);
    const auto m = static_cast<int>(detail::get_u64(f));
    const auto n_snap = detail::get_u64(f);
    ck.accumulators.resize(n_snap);
    for (auto& a : ck.accumulators) {
        a.init(m, 0.0);
        a.t = detail::get_f64(f);
        a.count = static_cast<long long>(detail::get_u64(f));
        for (auto* v : {&a.sum_nr, &a.sum_nr2, &a.sum_ni, &a.sum_ni2, &a.sum_qr, &a.sum_qr2,
                        &a.sum_qi, &a.sum_qi2})
            for (double& x : *v) x = detail::get_f64(f);
        double scalars[12];
        for (double& x : scalars) x = detail::get_f64(f);
        a.sum_tot = scalars[0];
        a.sum_tot2 = scalars[1];
        a.sum_toti = scalars[2];
        a.sum_toti2 = scalars[3];
        a.sum_x1 = scalars[4];
        a.sum_x12 = scalars[5];
        a.sum_x2 = scalars[6];
        a.sum_x22 = scalars[7];
        a.sum_dev = scalars[8];
        a.sum_dev2 = scalars[9];
    }
    if (!f) throw std::runtime_error("checkpoint: truncated file " + path);
    return ck;
}

}  // namespace cmbec

#endif
