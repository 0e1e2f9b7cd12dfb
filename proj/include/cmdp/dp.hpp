#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/report.hpp"

// Exact two-phase dynamic programming.
//
// Phase 1 (feasibility) iterates
//   T[V](x)   = min_u max{B(x), D(x,u) + sum_{x' transient} P(x'|x,u) V(x')}
//   F[Q](x,u) = max{B(x), D(x,u) + sum_{x' transient} P(x'|x,u) min_u' Q(x',u')}
// with B = 0 on absorbing states and -inf elsewhere. Updates only touch
// transient states, so the max with -inf is the identity and is skipped.
//
// Phase 2 (revenue) iterates the same kind of backup with a max over the
// refined action set U_FS(Q*, x) and the reward R.

namespace cmdp {

struct ValueTable {
  std::vector<double> values;

  double operator[](int x) const { return values[static_cast<std::size_t>(x)]; }
  double& operator[](int x) { return values[static_cast<std::size_t>(x)]; }

  static ValueTable zeros(const ExplicitCmdp& m) { return {std::vector<double>(m.state_count(), 0.0)}; }
};

/// Values per (state, action slot); slot order follows ExplicitCmdp::actions_at.
struct QTable {
  std::vector<std::vector<double>> values;

  double at(int x, int slot) const { return values[static_cast<std::size_t>(x)][static_cast<std::size_t>(slot)]; }
  std::span<const double> row(int x) const { return values[static_cast<std::size_t>(x)]; }

  static QTable zeros(const ExplicitCmdp& m) {
    QTable q;
    q.values.resize(m.state_count());
    for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
      q.values[x].assign(m.actions_at(x).size(), 0.0);
    return q;
  }
};

/// Weighted sup-norm ||f||_xi = max over transient x of |f(x)| / xi(x), with
/// xi(x) = T - t(x). Both Bellman operators contract in it with modulus
/// beta = (T-1)/T.
struct XiNorm {
  std::vector<double> weights;  // 0 on absorbing states, which are excluded
  double beta = 0.0;

  static XiNorm for_model(const ExplicitCmdp& m) {
    XiNorm n;
    n.weights.resize(m.state_count(), 0.0);
    for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
      if (!m.is_absorbing(x)) n.weights[x] = static_cast<double>(m.horizon - m.stage[x]);
    n.beta = static_cast<double>(m.horizon - 1) / static_cast<double>(m.horizon);
    return n;
  }

  double norm(std::span<const double> f) const {
    double best = 0.0;
    for (std::size_t x = 0; x < f.size(); ++x)
      if (weights[x] > 0.0) best = std::max(best, std::abs(f[x]) / weights[x]);
    return best;
  }

  double distance(const ValueTable& a, const ValueTable& b) const {
    double best = 0.0;
    for (std::size_t x = 0; x < weights.size(); ++x)
      if (weights[x] > 0.0) best = std::max(best, std::abs(a.values[x] - b.values[x]) / weights[x]);
    return best;
  }

  double distance(const QTable& a, const QTable& b) const {
    double best = 0.0;
    for (std::size_t x = 0; x < weights.size(); ++x) {
      if (weights[x] <= 0.0) continue;
      for (std::size_t u = 0; u < a.values[x].size(); ++u)
        best = std::max(best, std::abs(a.values[x][u] - b.values[x][u]) / weights[x]);
    }
    return best;
  }
};

namespace detail {

inline double expected_next(const ExplicitCmdp& m, const ActionRecord& a, const std::vector<double>& v) {
  double s = 0.0;
  for (const auto& [y, p] : a.next)
    if (!m.is_absorbing(y)) s += p * v[static_cast<std::size_t>(y)];
  return s;
}

inline int default_max_iters(const ExplicitCmdp& m, double tol) {
  const double bound = 10.0 * m.horizon * std::log(1.0 / tol);
  return std::max(m.horizon + 2, static_cast<int>(std::ceil(bound)));
}

// Jacobi fixed-point loop. Returns the first iterate whose residual
// ||op(v) - v|| is within tol; `iterations` counts operator applications
// that produced it.
template <class Table, class Op, class Dist>
Table iterate_to_fixed_point(Table v, const Op& op, const Dist& dist, double tol, int max_iters,
                             int& iterations, std::vector<double>& residuals) {
  if (!(tol > 0.0)) throw Error(ErrorCode::precondition, "tolerance must be positive");
  for (int k = 0;; ++k) {
    Table next = op(v);
    const double r = dist(next, v);
    residuals.push_back(r);
    if (r <= tol) {
      iterations = k;
      return v;
    }
    if (k >= max_iters)
      throw Error(ErrorCode::no_convergence, "residual " + format_real(r) + " after " +
                                                 std::to_string(k) + " iterations");
    v = std::move(next);
  }
}

}  // namespace detail

/// One application of the feasibility-phase operator T.
inline ValueTable bellman_T(const ExplicitCmdp& m, const ValueTable& v) {
  ValueTable out = ValueTable::zeros(m);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    double best = std::numeric_limits<double>::infinity();
    for (const auto& a : m.actions_at(x)) best = std::min(best, a.cost + detail::expected_next(m, a, v.values));
    out[x] = best;
  }
  return out;
}

inline double row_min(std::span<const double> row) {
  if (row.empty()) return 0.0;
  return *std::min_element(row.begin(), row.end());
}

/// One application of the state-action operator F.
inline QTable bellman_F(const ExplicitCmdp& m, const QTable& q) {
  std::vector<double> vmin(m.state_count(), 0.0);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
    if (!m.is_absorbing(x)) vmin[x] = row_min(q.row(x));
  QTable out = QTable::zeros(m);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    const auto& acts = m.actions_at(x);
    for (std::size_t u = 0; u < acts.size(); ++u)
      out.values[x][u] = acts[u].cost + detail::expected_next(m, acts[u], vmin);
  }
  return out;
}

struct FsSolution {
  ValueTable v;
  int iterations = 0;
  std::vector<double> residuals;
};

/// Value iteration for the feasibility problem from the all-zero table.
inline FsSolution value_iteration_fs(const ExplicitCmdp& m, double tol = 1e-10, int max_iters = 0) {
  const auto xi = XiNorm::for_model(m);
  FsSolution s;
  if (max_iters <= 0) max_iters = detail::default_max_iters(m, tol);
  s.v = detail::iterate_to_fixed_point(
      ValueTable::zeros(m), [&m](const ValueTable& v) { return bellman_T(m, v); },
      [&xi](const ValueTable& a, const ValueTable& b) { return xi.distance(a, b); }, tol, max_iters,
      s.iterations, s.residuals);
  return s;
}

struct QSolution {
  QTable q;
  int iterations = 0;
  std::vector<double> residuals;
};

inline QSolution compute_q_star(const ExplicitCmdp& m, double tol = 1e-10, int max_iters = 0) {
  const auto xi = XiNorm::for_model(m);
  QSolution s;
  if (max_iters <= 0) max_iters = detail::default_max_iters(m, tol);
  s.q = detail::iterate_to_fixed_point(
      QTable::zeros(m), [&m](const QTable& q) { return bellman_F(m, q); },
      [&xi](const QTable& a, const QTable& b) { return xi.distance(a, b); }, tol, max_iters,
      s.iterations, s.residuals);
  return s;
}

struct FeasibilityVerdict {
  bool feasible = false;
  double violation = 0.0;  // max{0, V*(x0)}
};

/// The clip max{0, .} of the feasibility objective is applied here, at x0
/// only; the iteration itself runs unclipped.
inline FeasibilityVerdict check_feasibility(const ExplicitCmdp& m, const ValueTable& v_star,
                                            double eps_feas = 1e-9) {
  const double v0 = m.is_absorbing(m.initial_state) ? 0.0 : v_star[m.initial_state];
  return {v0 <= eps_feas, std::max(0.0, v0)};
}

/// Slots u with Q(x,u) <= min Q(x,.) + eps and Q(x,u) <= eps. Shared by the
/// exact solver and the learners (which pass a noise tolerance).
inline std::vector<int> feasible_slots(std::span<const double> row, double eps) {
  std::vector<int> out;
  const double lo = row_min(row);
  for (std::size_t u = 0; u < row.size(); ++u)
    if (row[u] <= lo + eps && row[u] <= eps) out.push_back(static_cast<int>(u));
  return out;
}

/// Slots within eps of the row minimum: the least-violating actions, used
/// where the refined feasible set is empty.
inline std::vector<int> argmin_slots(std::span<const double> row, double eps) {
  std::vector<int> out;
  const double lo = row_min(row);
  for (std::size_t u = 0; u < row.size(); ++u)
    if (row[u] <= lo + eps) out.push_back(static_cast<int>(u));
  return out;
}

/// Refined feasible action ids at transient state x; throws
/// empty-feasible-set when no action qualifies.
inline std::vector<int> feasible_actions(const ExplicitCmdp& m, const QTable& q_star, int x,
                                         double eps_feas = 1e-9) {
  if (m.is_absorbing(x)) throw Error(ErrorCode::precondition, "feasible_actions needs a transient state");
  std::vector<int> ids;
  for (int slot : feasible_slots(q_star.row(x), eps_feas)) ids.push_back(m.actions_at(x)[slot].id);
  if (ids.empty())
    throw Error(ErrorCode::empty_feasible_set, "no action satisfies the constraint from state " + std::to_string(x));
  return ids;
}

/// U_FS(Q*, x) for every state. `effective` equals `members` where that is
/// nonempty and falls back to the argmin set elsewhere, so the revenue phase
/// is defined on every transient state.
struct FeasibleActionSet {
  double eps_feas = 1e-9;
  std::vector<std::vector<int>> members;
  std::vector<std::vector<int>> effective;

  bool repaired(int x) const { return members[x].empty() && !effective[x].empty(); }

  static FeasibleActionSet refine(const ExplicitCmdp& m, const QTable& q_star, double eps_feas = 1e-9) {
    FeasibleActionSet s;
    s.eps_feas = eps_feas;
    s.members.resize(m.state_count());
    s.effective.resize(m.state_count());
    for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
      if (m.is_absorbing(x)) continue;
      s.members[x] = feasible_slots(q_star.row(x), eps_feas);
      s.effective[x] = s.members[x].empty() ? argmin_slots(q_star.row(x), eps_feas) : s.members[x];
    }
    return s;
  }
};

inline double max_over(std::span<const double> row, const std::vector<int>& slots) {
  if (slots.empty()) return 0.0;
  double best = -std::numeric_limits<double>::infinity();
  for (int u : slots) best = std::max(best, row[static_cast<std::size_t>(u)]);
  return best;
}

/// One application of the revenue-phase operator T_R.
inline ValueTable bellman_TR(const ExplicitCmdp& m, const FeasibleActionSet& sets, const ValueTable& w) {
  ValueTable out = ValueTable::zeros(m);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    const auto& acts = m.actions_at(x);
    double best = -std::numeric_limits<double>::infinity();
    for (int u : sets.effective[x])
      best = std::max(best, acts[u].reward + detail::expected_next(m, acts[u], w.values));
    out[x] = best;
  }
  return out;
}

/// One application of F_R; defined for every admissible pair.
inline QTable bellman_FR(const ExplicitCmdp& m, const FeasibleActionSet& sets, const QTable& h) {
  std::vector<double> vmax(m.state_count(), 0.0);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
    if (!m.is_absorbing(x)) vmax[x] = max_over(h.row(x), sets.effective[x]);
  QTable out = QTable::zeros(m);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    const auto& acts = m.actions_at(x);
    for (std::size_t u = 0; u < acts.size(); ++u)
      out.values[x][u] = acts[u].reward + detail::expected_next(m, acts[u], vmax);
  }
  return out;
}

struct OptSolution {
  ValueTable w;
  QTable h;
  int iterations = 0;
  std::vector<double> residuals;
};

inline OptSolution value_iteration_opt(const ExplicitCmdp& m, const FeasibilityVerdict& verdict,
                                       const FeasibleActionSet& sets, double tol = 1e-10, int max_iters = 0) {
  if (!verdict.feasible)
    throw Error(ErrorCode::infeasible_input,
                "revenue phase requires a feasible problem (violation " + format_real(verdict.violation) + ")");
  const auto xi = XiNorm::for_model(m);
  OptSolution s;
  if (max_iters <= 0) max_iters = detail::default_max_iters(m, tol);
  s.w = detail::iterate_to_fixed_point(
      ValueTable::zeros(m), [&](const ValueTable& w) { return bellman_TR(m, sets, w); },
      [&xi](const ValueTable& a, const ValueTable& b) { return xi.distance(a, b); }, tol, max_iters,
      s.iterations, s.residuals);
  s.h = QTable::zeros(m);
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    const auto& acts = m.actions_at(x);
    for (std::size_t u = 0; u < acts.size(); ++u)
      s.h.values[x][u] = acts[u].reward + detail::expected_next(m, acts[u], s.w.values);
  }
  return s;
}

/// argmax of h over the refined set, smallest action on ties. Throws
/// empty-feasible-set if the resulting policy can reach a state whose refined
/// set is empty.
inline DeterministicPolicy extract_policy(const ExplicitCmdp& m, const QTable& h, const FeasibleActionSet& sets) {
  DeterministicPolicy p{std::vector<int>(m.state_count(), -1)};
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    int best = -1;
    for (int u : sets.effective[x])
      if (best < 0 || h.at(x, u) > h.at(x, best)) best = u;
    if (best >= 0) p.action_of[x] = m.actions_at(x)[best].id;
  }
  std::vector<char> seen(m.state_count(), 0);
  std::vector<int> stack{m.initial_state};
  while (!stack.empty()) {
    const int x = stack.back();
    stack.pop_back();
    if (seen[x] || m.is_absorbing(x)) continue;
    seen[x] = 1;
    if (sets.members[x].empty())
      throw Error(ErrorCode::empty_feasible_set, "policy reaches state " + std::to_string(x) +
                                                     " where no action satisfies the constraint");
    const auto& a = m.actions_at(x)[m.slot_of(x, p.action_of[x])];
    for (const auto& [y, prob] : a.next)
      if (prob > 0.0) stack.push_back(y);
  }
  return p;
}

/// Everything the two-phase solver produces.
struct TwoPhaseSolution {
  FsSolution fs;
  QSolution q;
  FeasibilityVerdict verdict;
  FeasibleActionSet sets;
  std::optional<OptSolution> opt;
  std::optional<DeterministicPolicy> policy;
};

/// Runs both phases. On an infeasible problem the revenue phase is skipped
/// and `opt`/`policy` stay empty.
inline TwoPhaseSolution solve_two_phase(const ExplicitCmdp& m, double tol = 1e-10, double eps_feas = 1e-9) {
  require_valid(m);
  TwoPhaseSolution s;
  s.fs = value_iteration_fs(m, tol);
  s.q = compute_q_star(m, tol);
  s.verdict = check_feasibility(m, s.fs.v, eps_feas);
  s.sets = FeasibleActionSet::refine(m, s.q.q, eps_feas);
  if (s.verdict.feasible) {
    s.opt = value_iteration_opt(m, s.verdict, s.sets, tol);
    s.policy = extract_policy(m, s.opt->h, s.sets);
  }
  return s;
}

inline std::string membership_bits(const ExplicitCmdp& m, const FeasibleActionSet& sets, int x) {
  std::string bits(m.actions_at(x).size(), '0');
  for (int u : sets.members[x]) bits[static_cast<std::size_t>(u)] = '1';
  return bits;
}

inline TableReport make_report(const ExplicitCmdp& m, const TwoPhaseSolution& s) {
  TableReport r;
  r.horizon = m.horizon;
  r.feasible = s.verdict.feasible;
  r.violation = s.verdict.violation;
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    ReportState st;
    st.key = std::to_string(x);
    if (!m.is_absorbing(x)) {
      st.v = s.fs.v[x];
      st.w = s.opt ? s.opt->w[x] : 0.0;
      st.ufs = membership_bits(m, s.sets, x);
      const auto& acts = m.actions_at(x);
      for (std::size_t u = 0; u < acts.size(); ++u)
        st.entries.push_back({std::to_string(acts[u].id), s.q.q.at(x, static_cast<int>(u)),
                              s.opt ? s.opt->h.at(x, static_cast<int>(u)) : 0.0});
    }
    r.states.push_back(std::move(st));
  }
  for (std::size_t k = 0; k < s.fs.residuals.size(); ++k)
    r.residuals.push_back({"fs", static_cast<int>(k), s.fs.residuals[k]});
  for (std::size_t k = 0; k < s.q.residuals.size(); ++k)
    r.residuals.push_back({"q", static_cast<int>(k), s.q.residuals[k]});
  if (s.opt)
    for (std::size_t k = 0; k < s.opt->residuals.size(); ++k)
      r.residuals.push_back({"opt", static_cast<int>(k), s.opt->residuals[k]});
  return r;
}

}  // namespace cmdp
