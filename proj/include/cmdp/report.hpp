#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/explicit_cmdp.hpp"

namespace cmdp {

/// Text snapshot shared by the DP solver and the learners:
///
///   cmdp-report 1
///   horizon <T> feasible <0|1> violation <r>
///   state <key> v <r> w <r> ufs <bits>
///   entry <key> <action-key> q <r> h <r>
///   residual <phase> <iteration> <r>
///
/// Keys are whitespace-free tokens. `ufs` holds one character per listed
/// action in ascending action order ('1' = member of the refined feasible set).
struct ReportEntry {
  std::string action;
  double q = 0.0;
  double h = 0.0;
};

struct ReportState {
  std::string key;
  double v = 0.0;
  double w = 0.0;
  std::string ufs;
  std::vector<ReportEntry> entries;
};

struct ReportResidual {
  std::string phase;
  int iteration = 0;
  double value = 0.0;
};

struct TableReport {
  int horizon = 0;
  bool feasible = true;
  double violation = 0.0;
  std::vector<ReportState> states;
  std::vector<ReportResidual> residuals;
};

inline void write_report(std::ostream& out, const TableReport& r) {
  out << "cmdp-report 1\n";
  out << "horizon " << r.horizon << " feasible " << (r.feasible ? 1 : 0) << " violation "
      << format_real(r.violation) << "\n";
  for (const auto& s : r.states) {
    out << "state " << s.key << " v " << format_real(s.v) << " w " << format_real(s.w) << " ufs "
        << (s.ufs.empty() ? "-" : s.ufs) << "\n";
    for (const auto& e : s.entries)
      out << "entry " << s.key << ' ' << e.action << " q " << format_real(e.q) << " h "
          << format_real(e.h) << "\n";
  }
  for (const auto& res : r.residuals)
    out << "residual " << res.phase << ' ' << res.iteration << ' ' << format_real(res.value) << "\n";
}

inline TableReport read_report(std::istream& in) {
  TableReport r;
  std::string tok;
  if (!(in >> tok) || tok != "cmdp-report") throw Error(ErrorCode::parse_error, "not a report");
  int version = 0;
  if (!(in >> version) || version != 1) throw Error(ErrorCode::parse_error, "unsupported report version");
  std::string k1, k2, k3;
  int feasible = 0;
  if (!(in >> k1 >> r.horizon >> k2 >> feasible >> k3 >> r.violation) || k1 != "horizon" ||
      k2 != "feasible" || k3 != "violation")
    throw Error(ErrorCode::parse_error, "bad report header");
  r.feasible = feasible != 0;
  while (in >> tok) {
    if (tok == "state") {
      ReportState s;
      std::string kv, kw, ku;
      if (!(in >> s.key >> kv >> s.v >> kw >> s.w >> ku >> s.ufs) || kv != "v" || kw != "w" || ku != "ufs")
        throw Error(ErrorCode::parse_error, "bad state line");
      if (s.ufs == "-") s.ufs.clear();
      r.states.push_back(std::move(s));
    } else if (tok == "entry") {
      std::string key, kq, kh;
      ReportEntry e;
      if (!(in >> key >> e.action >> kq >> e.q >> kh >> e.h) || kq != "q" || kh != "h")
        throw Error(ErrorCode::parse_error, "bad entry line");
      if (r.states.empty() || r.states.back().key != key)
        throw Error(ErrorCode::parse_error, "entry does not follow its state line");
      r.states.back().entries.push_back(std::move(e));
    } else if (tok == "residual") {
      ReportResidual res;
      if (!(in >> res.phase >> res.iteration >> res.value))
        throw Error(ErrorCode::parse_error, "bad residual line");
      r.residuals.push_back(std::move(res));
    } else {
      throw Error(ErrorCode::parse_error, "unknown record '" + tok + "'");
    }
  }
  return r;
}

}  // namespace cmdp
