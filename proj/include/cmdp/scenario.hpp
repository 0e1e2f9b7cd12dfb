#pragma once

#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cmdp/errors.hpp"
#include "cmdp/rideshare.hpp"

namespace cmdp {

/// Scenario files are JSON objects:
///
///   { "C": 2, "S": 2, "T": 3, "T_bar": 2, "F_bar": 10, "d": 0.2, "base_seed": 1,
///     "initial_placement": [[1, 0], [2, 0]],          // (station, tau), 1-based stations
///     "demand": <cell> | [[<cell> per period] per station],
///     "canonicalize": true, "decision_bound": 100000 }   // optional
///
///   <cell> = { "lambda": 1.5 | "count_probs": [..], "dest_probs": [..],
///              "duration_probs": [..], "fare": { "family": "triangular",
///              "params": [..], "grid_step": 0.01 }, "rank_weight": 1 }
///
/// Unknown keys are rejected.
namespace detail {

using json = nlohmann::json;

inline void only_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::parse_error, where + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || k == a;
    if (!ok) throw Error(ErrorCode::parse_error, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
T required(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw Error(ErrorCode::parse_error, std::string("missing '") + key + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("bad '") + key + "' in " + where + ": " + e.what());
  }
}

template <class T>
T optional_value(const json& j, const char* key, T fallback, const std::string& where) {
  return j.contains(key) ? required<T>(j, key, where) : fallback;
}

inline DemandCell parse_cell(const json& j, const std::string& where) {
  only_keys(j, {"lambda", "count_probs", "dest_probs", "duration_probs", "fare", "rank_weight"}, where);
  DemandCell c;
  if (j.contains("lambda") == j.contains("count_probs"))
    throw Error(ErrorCode::parse_error, where + " needs exactly one of 'lambda' and 'count_probs'");
  c.lambda = optional_value<double>(j, "lambda", 0.0, where);
  c.count_probs = optional_value<std::vector<double>>(j, "count_probs", {}, where);
  c.dest_probs = required<std::vector<double>>(j, "dest_probs", where);
  c.duration_probs = required<std::vector<double>>(j, "duration_probs", where);
  c.rank_weight = optional_value<double>(j, "rank_weight", 1.0, where);
  const auto& f = j.contains("fare") ? j.at("fare") : throw Error(ErrorCode::parse_error, "missing 'fare' in " + where);
  only_keys(f, {"family", "params", "grid_step"}, where + ".fare");
  c.fare.family = required<std::string>(f, "family", where + ".fare");
  c.fare.params = required<std::vector<double>>(f, "params", where + ".fare");
  c.fare.grid_step = optional_value<double>(f, "grid_step", 0.01, where + ".fare");
  return c;
}

}  // namespace detail

inline Scenario parse_scenario(const std::string& text) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid JSON: ") + e.what());
  }
  const std::string top = "scenario";
  detail::only_keys(j, {"C", "S", "T", "T_bar", "F_bar", "d", "base_seed", "initial_placement", "demand",
                        "canonicalize", "decision_bound"},
                    top);
  Scenario sc;
  sc.C = detail::required<int>(j, "C", top);
  sc.S = detail::required<int>(j, "S", top);
  sc.T = detail::required<int>(j, "T", top);
  sc.T_bar = detail::required<int>(j, "T_bar", top);
  sc.F_bar = detail::required<double>(j, "F_bar", top);
  sc.d = detail::required<double>(j, "d", top);
  sc.base_seed = detail::optional_value<std::uint64_t>(j, "base_seed", 0, top);
  sc.canonicalize = detail::optional_value<bool>(j, "canonicalize", true, top);
  sc.decision_bound = detail::optional_value<std::size_t>(j, "decision_bound", 100000, top);

  const auto placement = detail::required<std::vector<std::vector<int>>>(j, "initial_placement", top);
  for (const auto& p : placement) {
    if (p.size() != 2) throw Error(ErrorCode::parse_error, "initial_placement entries are [station, tau]");
    sc.initial.push_back(Vehicle{p[0] - 1, p[1]});
  }

  if (!j.contains("demand")) throw Error(ErrorCode::parse_error, "missing 'demand' in scenario");
  const auto& dj = j.at("demand");
  sc.demand.stations = sc.S;
  sc.demand.periods = sc.T;
  if (dj.is_object()) {
    const auto cell = detail::parse_cell(dj, "demand");
    sc.demand.cells.assign(static_cast<std::size_t>(sc.S) * static_cast<std::size_t>(sc.T), cell);
  } else if (dj.is_array()) {
    if (static_cast<int>(dj.size()) != sc.S) throw Error(ErrorCode::parse_error, "demand needs one row per station");
    for (int s = 0; s < sc.S; ++s) {
      const auto& row = dj.at(static_cast<std::size_t>(s));
      if (!row.is_array() || static_cast<int>(row.size()) != sc.T)
        throw Error(ErrorCode::parse_error, "demand rows need one cell per period");
      for (int t = 0; t < sc.T; ++t)
        sc.demand.cells.push_back(detail::parse_cell(
            row.at(static_cast<std::size_t>(t)), "demand[" + std::to_string(s) + "][" + std::to_string(t) + "]"));
    }
  } else {
    throw Error(ErrorCode::parse_error, "demand must be a cell or a station x period array");
  }

  try {
    sc.validate();
    for (const auto& c : sc.demand.cells)
      if (detail::fare_is_finite(c.fare)) fare_support(c.fare, sc.F_bar);
  } catch (const Error& e) {
    throw Error(ErrorCode::parse_error, e.what());
  }
  if (sc.T_bar > sc.T) sc.warnings.push_back("T_bar exceeds T");
  return sc;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_error, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario load_scenario(const std::string& path) { return parse_scenario(read_text_file(path)); }

}  // namespace cmdp
