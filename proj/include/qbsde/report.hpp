#pragma once
// Machine-readable run reports. Every row carries the formula it checks
// (the anchor), the measured value, the bound or target, and the Monte
// Carlo ci, so one-sided bounds are verified as measured <= bound + 3 ci.
// Payloads contain no timestamps: identical config and seed give
// byte-identical reports.

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace qbsde::report {

using ordered_json = nlohmann::ordered_json;

struct CheckRow {
  std::string name;
  std::string anchor;  // formula checked, e.g. "sup|Y| <= M + K/lambda + c dt"
  double measured = 0.0;
  double bound = 0.0;
  double ci = 0.0;
  bool pass = false;
};

struct Report {
  std::vector<CheckRow> rows;
  ordered_json config_echo;

  void add(CheckRow row) { rows.push_back(std::move(row)); }

  /// One-sided bound check: measured <= bound + 3 ci.
  void add_upper(const std::string& name, const std::string& anchor, double measured,
                 double bound, double ci = 0.0) {
    rows.push_back({name, anchor, measured, bound, ci, measured <= bound + 3.0 * ci});
  }

  /// Two-sided check: |measured - target| <= tol + 3 ci.
  void add_close(const std::string& name, const std::string& anchor, double measured,
                 double target, double tol, double ci = 0.0) {
    rows.push_back({name, anchor, measured, target, ci,
                    std::abs(measured - target) <= tol + 3.0 * ci});
  }

  void add_flag(const std::string& name, const std::string& anchor, bool pass) {
    rows.push_back({name, anchor, pass ? 1.0 : 0.0, 1.0, 0.0, pass});
  }

  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass) return false;
    return true;
  }

  std::string first_failure() const {
    for (const auto& r : rows)
      if (!r.pass) return r.name;
    return {};
  }

  ordered_json to_json() const {
    ordered_json j;
    j["format"] = "qbsde-report";
    j["version"] = 1;
    j["pass"] = all_pass();
    j["checks"] = ordered_json::array();
    for (const auto& r : rows) {
      ordered_json row;
      row["name"] = r.name;
      row["anchor"] = r.anchor;
      row["measured"] = r.measured;
      row["bound"] = r.bound;
      row["ci"] = r.ci;
      row["pass"] = r.pass;
      j["checks"].push_back(row);
    }
    j["config"] = config_echo;
    return j;
  }

  void write(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("report: cannot write " + path);
    out << to_json().dump(2) << "\n";
  }
};

}  // namespace qbsde::report
