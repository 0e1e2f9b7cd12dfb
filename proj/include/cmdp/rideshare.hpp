#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/model.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

// Stations are 0-based in this header; scenario files use 1-based indices.

struct RentalBid {
  int destination = 0;
  int duration = 1;
  double fare = 0.0;

  friend bool operator==(const RentalBid&, const RentalBid&) = default;
  friend auto operator<=>(const RentalBid&, const RentalBid&) = default;
};

/// Fare distribution. Families with finite support: "point" {v},
/// "discrete" {v1, p1, v2, p2, ...}, "triangular" {lo, mode, hi} on the
/// grid. Continuous families: "uniform" {lo, hi}, "normal" {mean, sd}.
/// Draws are restricted to [-F_bar, F_bar] and rounded to `grid_step`.
struct FareSpec {
  std::string family = "point";
  std::vector<double> params{0.0};
  double grid_step = 0.01;
};

struct DemandCell {
  double lambda = 0.0;
  /// Optional explicit count distribution (index = number of bids); when
  /// present it replaces Poisson(lambda).
  std::vector<double> count_probs;
  std::vector<double> dest_probs;      // size S
  std::vector<double> duration_probs;  // size T_bar, entry i is duration i+1
  FareSpec fare;
  double rank_weight = 1.0;
};

struct DemandSpec {
  int stations = 0;
  int periods = 0;
  std::vector<DemandCell> cells;  // station-major

  const DemandCell& at(int station, int t) const {
    return cells[static_cast<std::size_t>(station) * static_cast<std::size_t>(periods) + static_cast<std::size_t>(t)];
  }
};

struct Vehicle {
  int station = 0;  // q: destination, or current station when idle
  int tau = 0;      // remaining travel time

  friend bool operator==(const Vehicle&, const Vehicle&) = default;
  friend auto operator<=>(const Vehicle&, const Vehicle&) = default;
};

struct FleetState {
  int k = 0;
  std::vector<Vehicle> vehicles;

  friend bool operator==(const FleetState&, const FleetState&) = default;
};

struct Scenario {
  int C = 1;
  int S = 1;
  int T = 1;
  int T_bar = 1;
  double F_bar = 1.0;
  double d = 0.0;
  std::uint64_t base_seed = 0;
  std::vector<Vehicle> initial;
  DemandSpec demand;
  bool canonicalize = true;
  std::size_t decision_bound = 100000;
  std::vector<std::string> warnings;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::precondition, m); };
    if (C < 1 || S < 1 || T < 1 || T_bar < 1) fail("C, S, T and T_bar must be positive");
    if (!(F_bar > 0.0) || !std::isfinite(F_bar)) fail("F_bar must be positive");
    if (!std::isfinite(d)) fail("d must be finite");
    if (static_cast<int>(initial.size()) != C) fail("initial placement must list C vehicles");
    for (const auto& v : initial)
      if (v.station < 0 || v.station >= S || v.tau < 0 || v.tau > T_bar) fail("initial vehicle out of range");
    if (demand.stations != S || demand.periods != T ||
        demand.cells.size() != static_cast<std::size_t>(S) * static_cast<std::size_t>(T))
      fail("demand must cover every (station, time)");
    auto check_probs = [&](const std::vector<double>& p, std::size_t n, const char* what) {
      if (n && p.size() != n) fail(std::string(what) + " has the wrong length");
      double sum = 0.0;
      for (double x : p) {
        if (!(x >= 0.0) || !std::isfinite(x)) fail(std::string(what) + " has a negative entry");
        sum += x;
      }
      if (std::abs(sum - 1.0) > 1e-9) fail(std::string(what) + " does not sum to 1");
    };
    for (const auto& c : demand.cells) {
      if (c.count_probs.empty()) {
        if (!(c.lambda >= 0.0) || !std::isfinite(c.lambda)) fail("lambda must be finite and >= 0");
      } else {
        check_probs(c.count_probs, 0, "count_probs");
      }
      check_probs(c.dest_probs, static_cast<std::size_t>(S), "dest_probs");
      check_probs(c.duration_probs, static_cast<std::size_t>(T_bar), "duration_probs");
      const auto& fam = c.fare.family;
      if (fam != "point" && fam != "discrete" && fam != "triangular" && fam != "uniform" && fam != "normal")
        fail("unknown fare family '" + fam + "'");
      if (!(c.fare.grid_step > 0.0)) fail("grid_step must be positive");
      if (!(c.rank_weight > 0.0) || !std::isfinite(c.rank_weight)) fail("rank_weight must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Fares and bids
// ---------------------------------------------------------------------------

namespace detail {

inline double snap_fare(double x, double step, double f_bar) {
  const double r = std::round(x / step) * step;
  return std::clamp(r, -f_bar, f_bar);
}

inline bool fare_is_finite(const FareSpec& f) {
  return f.family == "point" || f.family == "discrete" || f.family == "triangular";
}

}  // namespace detail

/// Finite fare support as (value, probability) pairs sorted by value.
inline std::vector<std::pair<double, double>> fare_support(const FareSpec& f, double f_bar) {
  std::map<double, double> mass;
  auto add = [&](double v, double p) {
    if (v < -f_bar - 1e-12 || v > f_bar + 1e-12) return;  // truncated
    if (p > 0.0) mass[detail::snap_fare(v, f.grid_step, f_bar)] += p;
  };
  if (f.family == "point") {
    if (f.params.size() != 1) throw Error(ErrorCode::precondition, "point fare takes one parameter");
    add(f.params[0], 1.0);
  } else if (f.family == "discrete") {
    if (f.params.empty() || f.params.size() % 2 != 0)
      throw Error(ErrorCode::precondition, "discrete fare takes value/probability pairs");
    for (std::size_t i = 0; i < f.params.size(); i += 2) add(f.params[i], f.params[i + 1]);
  } else if (f.family == "triangular") {
    if (f.params.size() != 3 || !(f.params[0] <= f.params[1] && f.params[1] <= f.params[2]))
      throw Error(ErrorCode::precondition, "triangular fare takes lo <= mode <= hi");
    const double lo = f.params[0], mode = f.params[1], hi = f.params[2], h = f.grid_step;
    const long n = std::lround((hi - lo) / h);
    for (long i = 0; i <= n; ++i) {
      const double x = lo + static_cast<double>(i) * h;
      const double w = x < mode ? (x - lo + h) / (mode - lo + h) : (hi - x + h) / (hi - mode + h);
      add(x, w);
    }
  } else if (f.family == "uniform" || f.family == "normal") {
    throw Error(ErrorCode::non_finite_support, "fare family '" + f.family + "' has no finite support");
  } else {
    throw Error(ErrorCode::precondition, "unknown fare family '" + f.family + "'");
  }
  double total = 0.0;
  for (const auto& [v, p] : mass) total += p;
  if (!(total > 0.0)) throw Error(ErrorCode::precondition, "fare support is empty after truncation");
  std::vector<std::pair<double, double>> out;
  for (const auto& [v, p] : mass) out.emplace_back(v, p / total);
  return out;
}

inline double sample_fare(const FareSpec& f, double f_bar, RngStream& rng) {
  if (f.family == "uniform") {
    if (f.params.size() != 2) throw Error(ErrorCode::precondition, "uniform fare takes lo, hi");
    const double lo = std::max(f.params[0], -f_bar), hi = std::min(f.params[1], f_bar);
    if (!(lo <= hi)) throw Error(ErrorCode::precondition, "uniform fare range misses [-F_bar, F_bar]");
    return detail::snap_fare(rng.uniform(lo, hi), f.grid_step, f_bar);
  }
  if (f.family == "normal") {
    if (f.params.size() != 2 || !(f.params[1] >= 0.0)) throw Error(ErrorCode::precondition, "normal fare takes mean, sd");
    for (int attempt = 0; attempt < 1000; ++attempt) {
      const double x = f.params[0] + f.params[1] * rng.normal();
      if (x >= -f_bar && x <= f_bar) return detail::snap_fare(x, f.grid_step, f_bar);
    }
    return detail::snap_fare(std::clamp(f.params[0], -f_bar, f_bar), f.grid_step, f_bar);
  }
  const auto support = fare_support(f, f_bar);
  if (support.size() == 1) return support.front().first;
  std::vector<double> p;
  p.reserve(support.size());
  for (const auto& s : support) p.push_back(s.second);
  return support[rng.categorical(p)].first;
}

/// Bids arriving at `station` in period t: count ~ Poisson(lambda) (or the
/// cell's explicit count distribution), then i.i.d. destination, duration
/// and fare draws.
inline std::vector<RentalBid> sample_bids(int t, int station, const Scenario& sc, RngStream& rng) {
  if (t < 0 || t >= sc.T) throw Error(ErrorCode::precondition, "sample_bids needs t < T");
  const auto& cell = sc.demand.at(station, t);
  const std::size_t count =
      cell.count_probs.empty() ? static_cast<std::size_t>(rng.poisson(cell.lambda)) : rng.categorical(cell.count_probs);
  std::vector<RentalBid> bids;
  bids.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    RentalBid b;
    b.destination = static_cast<int>(rng.categorical(cell.dest_probs));
    b.duration = 1 + static_cast<int>(rng.categorical(cell.duration_probs));
    b.fare = sample_fare(cell.fare, sc.F_bar, rng);
    bids.push_back(b);
  }
  return bids;
}

/// Price-to-travel-time rank of a bid for target station j'.
inline double rank_value(const RentalBid& b, int target, double weight = 1.0) {
  if (b.destination != target) return -std::numeric_limits<double>::infinity();
  const double base = b.fare >= 0.0 ? b.fare / b.duration : b.fare * b.duration;
  return weight * base;
}

/// Bids to `target`, best first: rank descending, then higher fare, then
/// shorter duration, then arrival order.
inline std::vector<RentalBid> rank_bids(std::span<const RentalBid> bids, int target, double weight = 1.0) {
  std::vector<RentalBid> out;
  for (const auto& b : bids)
    if (b.destination == target) out.push_back(b);
  std::stable_sort(out.begin(), out.end(), [&](const RentalBid& a, const RentalBid& b) {
    const double ra = rank_value(a, target, weight), rb = rank_value(b, target, weight);
    if (ra != rb) return ra > rb;
    if (a.fare != b.fare) return a.fare > b.fare;
    return a.duration < b.duration;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

/// Per-pair dispatch counts, S x S row-major. Row j sums to the number of
/// idle vehicles at j. Ordered by the off-diagonal counts (row-major), so
/// "everyone stays" is the smallest decision.
struct DispatchDecision {
  int S = 0;
  std::vector<int> counts;

  int at(int j, int jp) const { return counts[static_cast<std::size_t>(j * S + jp)]; }
  int& at(int j, int jp) { return counts[static_cast<std::size_t>(j * S + jp)]; }

  std::vector<int> key() const {
    std::vector<int> k;
    for (int j = 0; j < S; ++j)
      for (int jp = 0; jp < S; ++jp)
        if (j != jp) k.push_back(at(j, jp));
    return k;
  }

  friend bool operator==(const DispatchDecision&, const DispatchDecision&) = default;
  friend bool operator<(const DispatchDecision& a, const DispatchDecision& b) {
    const auto ka = a.key(), kb = b.key();
    if (ka != kb) return ka < kb;
    return a.counts < b.counts;
  }
};

inline std::vector<int> idle_counts(const FleetState& x, int S) {
  std::vector<int> n(static_cast<std::size_t>(S), 0);
  for (const auto& v : x.vehicles)
    if (v.tau == 0) ++n[static_cast<std::size_t>(v.station)];
  return n;
}

/// Arrivals per pair: A[j][j'] = number of bids at j with destination j'.
inline std::vector<std::vector<int>> arrivals(const std::vector<std::vector<RentalBid>>& bids, int S) {
  std::vector<std::vector<int>> a(static_cast<std::size_t>(S), std::vector<int>(static_cast<std::size_t>(S), 0));
  for (int j = 0; j < S && j < static_cast<int>(bids.size()); ++j)
    for (const auto& b : bids[static_cast<std::size_t>(j)]) ++a[j][b.destination];
  return a;
}

inline DispatchDecision stay_decision(const FleetState& x, int S) {
  DispatchDecision d{S, std::vector<int>(static_cast<std::size_t>(S * S), 0)};
  const auto idle = idle_counts(x, S);
  for (int j = 0; j < S; ++j) d.at(j, j) = idle[j];
  return d;
}

/// Every count matrix allowed by the dispatch limits: off-diagonal entries
/// bounded by arrivals, each row summing to the idle count. Returned in
/// ascending decision order.
inline std::vector<DispatchDecision> admissible_decisions(const FleetState& x,
                                                          const std::vector<std::vector<int>>& arr, int S,
                                                          std::size_t bound = 100000) {
  const auto idle = idle_counts(x, S);
  // Per-station off-diagonal rows in lexicographic order.
  std::vector<std::vector<std::vector<int>>> rows(static_cast<std::size_t>(S));
  for (int j = 0; j < S; ++j) {
    std::vector<int> caps;
    for (int jp = 0; jp < S; ++jp)
      if (jp != j) caps.push_back(std::min(arr[j][jp], idle[j]));
    std::vector<int> cur(caps.size(), 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t i, int left) {
      if (i == caps.size()) {
        rows[j].push_back(cur);
        return;
      }
      for (int c = 0; c <= std::min(caps[i], left); ++c) {
        cur[i] = c;
        rec(i + 1, left - c);
      }
      cur[i] = 0;
    };
    rec(0, idle[j]);
  }
  std::size_t total = 1;
  for (const auto& r : rows) {
    if (total > bound / r.size()) throw Error(ErrorCode::too_large, "admissible decision count exceeds bound");
    total *= r.size();
  }
  if (total > bound) throw Error(ErrorCode::too_large, "admissible decision count exceeds bound");
  std::vector<DispatchDecision> out;
  out.reserve(total);
  std::vector<std::size_t> pick(static_cast<std::size_t>(S), 0);
  for (std::size_t n = 0; n < total; ++n) {
    DispatchDecision d{S, std::vector<int>(static_cast<std::size_t>(S * S), 0)};
    for (int j = 0; j < S; ++j) {
      const auto& r = rows[j][pick[j]];
      int used = 0, i = 0;
      for (int jp = 0; jp < S; ++jp) {
        if (jp == j) continue;
        d.at(j, jp) = r[static_cast<std::size_t>(i++)];
        used += d.at(j, jp);
      }
      d.at(j, j) = idle[j] - used;
    }
    out.push_back(std::move(d));
    for (int j = S - 1; j >= 0; --j) {  // odometer, last station fastest
      if (++pick[j] < rows[j].size()) break;
      pick[j] = 0;
    }
  }
  return out;
}

/// Dispatch-limit admissibility of a decision against the fleet and bids.
inline void check_admissible(const FleetState& x, const DispatchDecision& u,
                             const std::vector<std::vector<RentalBid>>& bids, int S) {
  if (u.S != S || u.counts.size() != static_cast<std::size_t>(S * S))
    throw Error(ErrorCode::inadmissible_decision, "decision has the wrong shape");
  const auto idle = idle_counts(x, S);
  const auto arr = arrivals(bids, S);
  for (int j = 0; j < S; ++j) {
    int row = 0;
    for (int jp = 0; jp < S; ++jp) {
      if (u.at(j, jp) < 0) throw Error(ErrorCode::inadmissible_decision, "negative dispatch count");
      if (jp != j && u.at(j, jp) > arr[j][jp])
        throw Error(ErrorCode::inadmissible_decision, "dispatches exceed arrivals");
      row += u.at(j, jp);
    }
    if (row != idle[j]) throw Error(ErrorCode::inadmissible_decision, "dispatch row does not cover idle vehicles");
  }
}

/// Greedy assignment: at each station, positive bids by rank (any
/// destination), then rebalancing bids to other stations by rank, then idle.
inline DispatchDecision greedy_policy(const FleetState& x, const std::vector<std::vector<RentalBid>>& bids,
                                      const Scenario& sc) {
  const int S = sc.S;
  DispatchDecision d{S, std::vector<int>(static_cast<std::size_t>(S * S), 0)};
  const auto idle = idle_counts(x, S);
  const int t = std::min(x.k, sc.T - 1);
  for (int j = 0; j < S; ++j) {
    const double w = sc.demand.at(j, t).rank_weight;
    std::vector<std::pair<double, RentalBid>> positive, rebalance;
    for (const auto& b : bids[static_cast<std::size_t>(j)]) {
      if (b.fare > 0.0)
        positive.emplace_back(rank_value(b, b.destination, w), b);
      else if (b.destination != j)
        rebalance.emplace_back(rank_value(b, b.destination, w), b);
    }
    auto by_rank = [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      if (a.second.fare != b.second.fare) return a.second.fare > b.second.fare;
      return a.second.duration < b.second.duration;
    };
    std::stable_sort(positive.begin(), positive.end(), by_rank);
    std::stable_sort(rebalance.begin(), rebalance.end(), by_rank);
    int left = idle[j];
    for (const auto* list : {&positive, &rebalance})
      for (const auto& [r, b] : *list) {
        if (left == 0) break;
        ++d.at(j, b.destination);
        --left;
      }
    // Round trips already counted on the diagonal; the rest stay idle there too.
    d.at(j, j) += left;
  }
  return d;
}

// ---------------------------------------------------------------------------
// Dynamics
// ---------------------------------------------------------------------------

inline void canonicalize(FleetState& x) { std::sort(x.vehicles.begin(), x.vehicles.end()); }

/// Constraint cost d - sum_i tau_i / (T C) of the pre-transition state.
inline double constraint_cost(const FleetState& x, const Scenario& sc) {
  if (x.k >= sc.T) return 0.0;
  long tau = 0;
  for (const auto& v : x.vehicles) tau += v.tau;
  return sc.d - static_cast<double>(tau) / (static_cast<double>(sc.T) * static_cast<double>(sc.C));
}

/// Accepted bids per (j, j'): the top counts(j,j') ranked bids for j' != j;
/// the positive-rank bids among the counts(j,j) round-trip slots.
inline std::vector<std::vector<std::vector<RentalBid>>> accepted_bids(
    const FleetState& x, const DispatchDecision& u, const std::vector<std::vector<RentalBid>>& bids,
    const Scenario& sc) {
  const int S = sc.S;
  const int t = std::min(x.k, sc.T - 1);
  std::vector<std::vector<std::vector<RentalBid>>> acc(static_cast<std::size_t>(S),
                                                       std::vector<std::vector<RentalBid>>(static_cast<std::size_t>(S)));
  for (int j = 0; j < S; ++j) {
    const double w = sc.demand.at(j, t).rank_weight;
    for (int jp = 0; jp < S; ++jp) {
      auto ranked = rank_bids(bids[static_cast<std::size_t>(j)], jp, w);
      if (jp == j)
        std::erase_if(ranked, [&](const RentalBid& b) { return !(rank_value(b, jp, w) > 0.0); });
      const auto n = std::min<std::size_t>(ranked.size(), static_cast<std::size_t>(u.at(j, jp)));
      acc[j][jp].assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n));
    }
  }
  return acc;
}

/// Realized reward of a decision: the sum of accepted fares. Deterministic
/// given the fleet and the realized bids.
inline double dispatch_reward(const FleetState& x, const DispatchDecision& u,
                              const std::vector<std::vector<RentalBid>>& bids, const Scenario& sc) {
  if (x.k >= sc.T) return 0.0;
  double r = 0.0;
  for (const auto& row : accepted_bids(x, u, bids, sc))
    for (const auto& cell : row)
      for (const auto& b : cell) r += b.fare;
  return r;
}

struct StepOutcome {
  FleetState next;
  double reward = 0.0;
  double cost = 0.0;
};

/// One period of fleet dynamics. In-transit vehicles move one slot closer;
/// idle vehicles take their assigned bids (durations allocated by a uniform
/// random bijection) or stay idle with zero remaining time.
inline StepOutcome env_step(const FleetState& x, const DispatchDecision& u,
                            const std::vector<std::vector<RentalBid>>& bids, const Scenario& sc, RngStream& rng) {
  if (x.k >= sc.T) return {x, 0.0, 0.0};
  check_admissible(x, u, bids, sc.S);
  const int S = sc.S;
  StepOutcome out;
  out.cost = constraint_cost(x, sc);
  out.next.k = x.k + 1;
  out.next.vehicles = x.vehicles;
  const auto acc = accepted_bids(x, u, bids, sc);
  for (int j = 0; j < S; ++j) {
    std::vector<std::size_t> idle;
    for (std::size_t i = 0; i < x.vehicles.size(); ++i)
      if (x.vehicles[i].tau == 0 && x.vehicles[i].station == j) idle.push_back(i);
    std::size_t slot = 0;
    for (int jp = 0; jp < S; ++jp) {
      std::vector<RentalBid> trips = acc[j][jp];
      rng.shuffle(trips);
      const auto n = static_cast<std::size_t>(u.at(j, jp));
      for (std::size_t m = 0; m < n; ++m, ++slot) {
        auto& v = out.next.vehicles[idle[slot]];
        if (m < trips.size()) {
          v = Vehicle{jp, trips[m].duration};
          out.reward += trips[m].fare;
        } else {
          v = Vehicle{j, 0};
        }
      }
    }
  }
  for (std::size_t i = 0; i < x.vehicles.size(); ++i)
    if (x.vehicles[i].tau > 0) out.next.vehicles[i].tau = x.vehicles[i].tau - 1;
  if (sc.canonicalize) canonicalize(out.next);
  return out;
}

// ---------------------------------------------------------------------------
// Decision states and the sampled model
// ---------------------------------------------------------------------------

/// Decision state: fleet plus the realized bids of the period, reduced to
/// the bids that can still matter. With n idle vehicles at j, only the top
/// n bids per destination (and the top n positive round trips) can ever be
/// accepted.
struct EnvState {
  FleetState fleet;
  std::vector<std::vector<RentalBid>> bids;  // per station, grouped by destination, best first

  friend bool operator==(const EnvState&, const EnvState&) = default;
};

inline std::vector<std::vector<RentalBid>> relevant_bids(const FleetState& x,
                                                         const std::vector<std::vector<RentalBid>>& bids,
                                                         const Scenario& sc) {
  const auto idle = idle_counts(x, sc.S);
  const int t = std::min(x.k, sc.T - 1);
  std::vector<std::vector<RentalBid>> out(static_cast<std::size_t>(sc.S));
  for (int j = 0; j < sc.S; ++j) {
    const std::size_t n = static_cast<std::size_t>(idle[j]);
    if (n == 0) continue;
    const double w = sc.demand.at(j, t).rank_weight;
    for (int jp = 0; jp < sc.S; ++jp) {
      auto ranked = rank_bids(bids[static_cast<std::size_t>(j)], jp, w);
      if (jp == j) std::erase_if(ranked, [&](const RentalBid& b) { return !(rank_value(b, jp, w) > 0.0); });
      if (ranked.size() > n) ranked.resize(n);
      out[j].insert(out[j].end(), ranked.begin(), ranked.end());
    }
  }
  return out;
}

inline std::string to_key(const EnvState& s) {
  std::string k = std::to_string(s.fleet.k);
  if (s.fleet.vehicles.empty()) return k + "|END";
  k += '|';
  for (std::size_t i = 0; i < s.fleet.vehicles.size(); ++i) {
    if (i) k += ',';
    k += std::to_string(s.fleet.vehicles[i].station + 1) + ':' + std::to_string(s.fleet.vehicles[i].tau);
  }
  for (std::size_t j = 0; j < s.bids.size(); ++j) {
    k += '|';
    for (std::size_t i = 0; i < s.bids[j].size(); ++i) {
      const auto& b = s.bids[j][i];
      if (i) k += ',';
      k += std::to_string(b.destination + 1) + ':' + std::to_string(b.duration) + ':' + format_real(b.fare);
    }
  }
  return k;
}

inline std::string to_key(const DispatchDecision& u) {
  std::string k;
  for (int c : u.key()) {
    if (!k.empty()) k += '.';
    k += std::to_string(c);
  }
  return k.empty() ? "-" : k;
}

}  // namespace cmdp

template <>
struct std::hash<cmdp::EnvState> {
  std::size_t operator()(const cmdp::EnvState& s) const noexcept {
    std::uint64_t h = cmdp::detail::mix64(static_cast<std::uint64_t>(s.fleet.k) + 1);
    auto mix = [&h](std::uint64_t v) { h = cmdp::detail::mix64(h ^ (v + cmdp::detail::kGolden)); };
    for (const auto& v : s.fleet.vehicles) mix(static_cast<std::uint64_t>(v.station) << 32 | static_cast<std::uint32_t>(v.tau));
    for (const auto& row : s.bids) {
      mix(0xB1D5ull);
      for (const auto& b : row) {
        mix(static_cast<std::uint64_t>(b.destination) << 32 | static_cast<std::uint32_t>(b.duration));
        mix(std::hash<double>{}(b.fare));
      }
    }
    return static_cast<std::size_t>(h);
  }
};

namespace cmdp {

/// The vehicle-sharing CMDP as a sampled model over decision states. All
/// states with k = T collapse into one END state.
class RideshareModel {
 public:
  using state_type = EnvState;
  using action_type = DispatchDecision;

  explicit RideshareModel(Scenario sc) : sc_(std::move(sc)) { sc_.validate(); }

  const Scenario& scenario() const noexcept { return sc_; }

  FleetState initial_fleet() const {
    FleetState x{0, sc_.initial};
    if (sc_.canonicalize) canonicalize(x);
    return x;
  }

  static EnvState end_state(int T) { return EnvState{FleetState{T, {}}, {}}; }

  /// Decision state for a fleet at the start of its period, bids drawn.
  EnvState observe(FleetState x, RngStream& rng) const {
    if (x.k >= sc_.T) return end_state(sc_.T);
    std::vector<std::vector<RentalBid>> bids;
    for (int j = 0; j < sc_.S; ++j) bids.push_back(sample_bids(x.k, j, sc_, rng));
    auto rel = relevant_bids(x, bids, sc_);
    return EnvState{std::move(x), std::move(rel)};
  }

  EnvState sample_initial(RngStream& rng) const { return observe(initial_fleet(), rng); }
  bool is_absorbing(const EnvState& s) const { return s.fleet.k >= sc_.T; }
  int horizon() const { return sc_.T; }
  int stage(const EnvState& s) const { return s.fleet.k; }

  std::vector<DispatchDecision> actions(const EnvState& s) const {
    if (is_absorbing(s)) return {stay_decision(s.fleet, sc_.S)};
    try {
      return admissible_decisions(s.fleet, arrivals(s.bids, sc_.S), sc_.S, sc_.decision_bound);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::too_large) throw;
    }
    std::vector<DispatchDecision> fallback{stay_decision(s.fleet, sc_.S), greedy_policy(s.fleet, s.bids, sc_)};
    std::sort(fallback.begin(), fallback.end());
    fallback.erase(std::unique(fallback.begin(), fallback.end()), fallback.end());
    return fallback;
  }

  double reward(const EnvState& s, const DispatchDecision& u) const {
    return dispatch_reward(s.fleet, u, s.bids, sc_);
  }
  double cost(const EnvState& s, const DispatchDecision&) const { return constraint_cost(s.fleet, sc_); }

  Transition<EnvState> sample(const EnvState& s, const DispatchDecision& u, RngStream& rng) const {
    if (is_absorbing(s)) return {s, 0.0, 0.0};
    auto step = env_step(s.fleet, u, s.bids, sc_, rng);
    return {observe(std::move(step.next), rng), step.reward, step.cost};
  }

 private:
  Scenario sc_;
};

static_assert(ExactCostModel<RideshareModel>);

/// Greedy baseline as a policy over decision states.
class GreedyDispatchPolicy {
 public:
  explicit GreedyDispatchPolicy(const RideshareModel& m) : m_(&m) {}
  DispatchDecision operator()(const EnvState& s) const { return greedy_policy(s.fleet, s.bids, m_->scenario()); }

 private:
  const RideshareModel* m_;
};

// ---------------------------------------------------------------------------
// Exact export
// ---------------------------------------------------------------------------

struct ExportedCmdp {
  ExplicitCmdp model;
  std::vector<EnvState> states;  // by id; the optional root has an empty fleet at k = -1
  std::unordered_map<EnvState, int> index;
  std::vector<std::vector<DispatchDecision>> decisions;  // by state id, indexed by action id
  bool has_root = false;
};

namespace detail {

/// Tail mass below this is folded into the largest retained bid count.
inline constexpr double kPoissonTail = 1e-9;

inline std::vector<double> count_distribution(const DemandCell& c) {
  if (!c.count_probs.empty()) return c.count_probs;
  std::vector<double> p;
  double pk = std::exp(-c.lambda), cdf = 0.0;
  for (int k = 0;; ++k) {
    if (k > 0) pk *= c.lambda / k;
    p.push_back(pk);
    cdf += pk;
    if (1.0 - cdf < kPoissonTail || k > 10000) break;
  }
  p.back() += std::max(0.0, 1.0 - cdf);
  return p;
}

/// Distribution of the relevant bid list at one station for one period,
/// given n idle vehicles there. Enumerates bid multisets with multinomial
/// weights.
inline std::map<std::vector<RentalBid>, double> station_bid_distribution(const Scenario& sc, int j, int t, int n_idle) {
  std::map<std::vector<RentalBid>, double> out;
  if (n_idle == 0) {
    out[{}] = 1.0;
    return out;
  }
  const auto& cell = sc.demand.at(j, t);
  std::vector<std::pair<RentalBid, double>> support;
  for (const auto& [fare, pf] : fare_support(cell.fare, sc.F_bar))
    for (int g = 0; g < sc.S; ++g)
      for (int dur = 1; dur <= sc.T_bar; ++dur) {
        const double p = cell.dest_probs[g] * cell.duration_probs[dur - 1] * pf;
        if (p > 0.0) support.push_back({RentalBid{g, dur, fare}, p});
      }
  const auto counts = count_distribution(cell);
  FleetState probe;
  probe.k = t;
  for (int i = 0; i < n_idle; ++i) probe.vehicles.push_back(Vehicle{j, 0});
  std::vector<int> mult(support.size(), 0);
  std::vector<double> log_fact{0.0};
  for (std::size_t total = 0; total < counts.size(); ++total) {
    if (counts[total] <= 0.0) continue;
    while (log_fact.size() <= total) log_fact.push_back(log_fact.back() + std::log(static_cast<double>(log_fact.size())));
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t i, std::size_t left) {
      if (i + 1 == support.size() || left == 0) {
        if (i < support.size()) mult[i] = static_cast<int>(left);
        double lp = log_fact[total];
        std::vector<RentalBid> bids;
        for (std::size_t s = 0; s < support.size(); ++s) {
          if (!mult[s]) continue;
          lp += mult[s] * std::log(support[s].second) - log_fact[static_cast<std::size_t>(mult[s])];
          bids.insert(bids.end(), static_cast<std::size_t>(mult[s]), support[s].first);
        }
        std::vector<std::vector<RentalBid>> all(static_cast<std::size_t>(sc.S));
        all[static_cast<std::size_t>(j)] = std::move(bids);
        auto rel = relevant_bids(probe, all, sc);
        out[std::move(rel[static_cast<std::size_t>(j)])] += counts[total] * std::exp(lp);
        if (i < support.size()) mult[i] = 0;
        return;
      }
      for (std::size_t c = 0; c <= left; ++c) {
        mult[i] = static_cast<int>(c);
        rec(i + 1, left - c);
      }
      mult[i] = 0;
    };
    if (support.empty()) {
      if (total == 0) out[{}] += counts[0];
      else throw Error(ErrorCode::precondition, "bids arrive but the bid support is empty");
      continue;
    }
    rec(0, total);
  }
  return out;
}

}  // namespace detail

/// Exhaustive explicit CMDP of a micro scenario over decision states. When
/// the first period's bids are random, a root state (stage 0, one zero-cost
/// action) draws them and the horizon grows by one.
inline ExportedCmdp export_explicit(const Scenario& sc, std::size_t max_states = 50000) {
  sc.validate();
  if (!sc.canonicalize) throw Error(ErrorCode::precondition, "export needs canonical states");
  for (const auto& c : sc.demand.cells)
    if (!detail::fare_is_finite(c.fare)) {
      fare_support(c.fare, sc.F_bar);  // throws the family-specific error
    }
  const RideshareModel model(sc);
  ExportedCmdp out;

  std::map<std::tuple<int, int, int>, std::map<std::vector<RentalBid>, double>> cache;
  auto station_dist = [&](int j, int t, int n) -> const std::map<std::vector<RentalBid>, double>& {
    const auto key = std::make_tuple(j, t, n);
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, detail::station_bid_distribution(sc, j, t, n)).first;
    return it->second;
  };
  // Decision-state distribution of a fleet at the start of its period.
  auto observe_dist = [&](const FleetState& x) {
    std::vector<std::pair<EnvState, double>> dist;
    if (x.k >= sc.T) {
      dist.emplace_back(RideshareModel::end_state(sc.T), 1.0);
      return dist;
    }
    const auto idle = idle_counts(x, sc.S);
    dist.emplace_back(EnvState{x, std::vector<std::vector<RentalBid>>(static_cast<std::size_t>(sc.S))}, 1.0);
    for (int j = 0; j < sc.S; ++j) {
      std::vector<std::pair<EnvState, double>> next;
      for (const auto& [s, p] : dist)
        for (const auto& [bids, q] : station_dist(j, x.k, idle[j])) {
          EnvState e = s;
          e.bids[static_cast<std::size_t>(j)] = bids;
          next.emplace_back(std::move(e), p * q);
        }
      dist = std::move(next);
    }
    return dist;
  };

  const auto initial = observe_dist(model.initial_fleet());
  out.has_root = initial.size() > 1;
  const int offset = out.has_root ? 1 : 0;
  ExplicitCmdp& m = out.model;
  m.horizon = sc.T + offset;

  std::deque<int> queue;
  auto intern = [&](const EnvState& s) {
    auto it = out.index.find(s);
    if (it != out.index.end()) return it->second;
    if (out.states.size() >= max_states) throw Error(ErrorCode::too_large, "canonical state count exceeds bound");
    const bool absorbing = model.is_absorbing(s);
    const int id = absorbing ? m.add_absorbing_state() : m.add_state(s.fleet.k + offset, false);
    out.states.push_back(s);
    out.decisions.emplace_back();
    out.index.emplace(s, id);
    if (!absorbing) queue.push_back(id);
    return id;
  };

  if (out.has_root) {
    const int root = m.add_state(0, false);
    out.states.push_back(EnvState{FleetState{-1, {}}, {}});
    out.decisions.emplace_back();
    m.initial_state = root;
    ActionRecord a;
    a.id = 0;
    std::map<int, double> next;
    for (const auto& [s, p] : initial) next[intern(s)] += p;
    a.next.assign(next.begin(), next.end());
    m.add_action(root, std::move(a));
  } else {
    m.initial_state = intern(initial.front().first);
  }

  while (!queue.empty()) {
    const int id = queue.front();
    queue.pop_front();
    const EnvState s = out.states[static_cast<std::size_t>(id)];
    auto decisions = admissible_decisions(s.fleet, arrivals(s.bids, sc.S), sc.S, sc.decision_bound);
    for (std::size_t a = 0; a < decisions.size(); ++a) {
      // The post-decision fleet is deterministic up to vehicle order.
      RngStream unused(0);
      const auto step = env_step(s.fleet, decisions[a], s.bids, sc, unused);
      ActionRecord rec;
      rec.id = static_cast<int>(a);
      rec.reward = step.reward;
      rec.cost = step.cost;
      std::map<int, double> next;
      for (const auto& [ns, p] : observe_dist(step.next)) next[intern(ns)] += p;
      rec.next.assign(next.begin(), next.end());
      m.add_action(id, std::move(rec));
    }
    out.decisions[static_cast<std::size_t>(id)] = std::move(decisions);
  }
  return out;
}

}  // namespace cmdp
