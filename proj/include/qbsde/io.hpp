#pragma once
// Export formats.
//
// Ensemble CSV: header `path,time_index,x0..x{d-1}`, one row per (path,
// node). Ensemble binary: magic "QBSDENS1", then u32 version, u64 n_paths,
// u32 steps, u32 state_dim, u32 noise_dim, f64 horizon, u64 seed, followed
// by the state array (path-major doubles), the increment array, and the
// exit indices (i32), all native little-endian.
//
// Cauchy CSV columns are exactly `n,m,gap,bound,ci` in that order.

#include <cstdint>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "qbsde/bsde.hpp"
#include "qbsde/forward.hpp"
#include "qbsde/horizon.hpp"
#include "qbsde/mild.hpp"

namespace qbsde::io {

inline std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

inline void ensemble_to_csv(const fwd::PathEnsemble& ens, std::ostream& out) {
  out << "path,time_index";
  for (int j = 0; j < ens.state_dim; ++j) out << ",x" << j;
  out << "\n";
  for (int p = 0; p < ens.n_paths; ++p)
    for (int i = 0; i <= ens.grid.steps; ++i) {
      out << p << "," << i;
      const auto x = ens.state(p, i);
      for (int j = 0; j < ens.state_dim; ++j) out << "," << format_double(x[j]);
      out << "\n";
    }
}

inline void ensemble_to_binary(const fwd::PathEnsemble& ens, std::ostream& out) {
  const char magic[8] = {'Q', 'B', 'S', 'D', 'E', 'N', 'S', '1'};
  out.write(magic, 8);
  auto write_u32 = [&](uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto write_u64 = [&](uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  auto write_f64 = [&](double v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  write_u32(1u);
  write_u64(static_cast<uint64_t>(ens.n_paths));
  write_u32(static_cast<uint32_t>(ens.grid.steps));
  write_u32(static_cast<uint32_t>(ens.state_dim));
  write_u32(static_cast<uint32_t>(ens.noise_dim));
  write_f64(ens.grid.horizon);
  write_u64(ens.seed);
  out.write(reinterpret_cast<const char*>(ens.states.data()),
            static_cast<std::streamsize>(ens.states.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(ens.noise.data()),
            static_cast<std::streamsize>(ens.noise.size() * sizeof(double)));
  out.write(reinterpret_cast<const char*>(ens.exit_index.data()),
            static_cast<std::streamsize>(ens.exit_index.size() * sizeof(int32_t)));
}

inline void cauchy_to_csv(const std::vector<horizon::CauchyRow>& rows, std::ostream& out) {
  out << "n,m,gap,bound,ci\n";
  for (const auto& r : rows)
    out << format_double(r.n) << "," << format_double(r.m) << "," << format_double(r.gap)
        << "," << format_double(r.bound) << "," << format_double(r.ci) << "\n";
}

/// Long-format companion for plotting: one (series, n, value) row per
/// quantity, gaps and bounds against the smaller horizon.
inline void cauchy_to_long_csv(const std::vector<horizon::CauchyRow>& rows,
                               std::ostream& out) {
  out << "series,n,value\n";
  for (const auto& r : rows)
    out << "gap," << format_double(r.n) << "," << format_double(r.gap) << "\n";
  for (const auto& r : rows)
    out << "bound," << format_double(r.n) << "," << format_double(r.bound) << "\n";
  for (const auto& r : rows)
    out << "ci," << format_double(r.n) << "," << format_double(r.ci) << "\n";
}

inline void value_field_to_csv(const mild::ValueField& field, std::ostream& out) {
  out << "";
  for (int j = 0; j < field.state_dim; ++j) out << "x" << j << ",";
  out << "v";
  for (int j = 0; j < field.noise_dim; ++j) out << ",g" << j;
  out << ",ci\n";
  for (const auto& pt : field.points) {
    for (int j = 0; j < field.state_dim; ++j) out << format_double(pt.x[j]) << ",";
    out << format_double(pt.value);
    for (int j = 0; j < field.noise_dim; ++j) out << "," << format_double(pt.grad_sigma[j]);
    out << "," << format_double(pt.ci) << "\n";
  }
}

}  // namespace qbsde::io
