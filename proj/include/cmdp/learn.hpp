#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "cmdp/dp.hpp"
#include "cmdp/errors.hpp"
#include "cmdp/evaluation.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/model.hpp"
#include "cmdp/report.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

// ---------------------------------------------------------------------------
// Step sizes
// ---------------------------------------------------------------------------

/// Per-key power-law steps: zeta2 = (1+n)^-exponent_fast drives the
/// feasibility table, zeta1 = (1+n)^-exponent_slow the revenue table. With
/// 1/2 < fast < slow <= 1 both are square-summable but not summable and
/// zeta1/zeta2 -> 0.
struct StepSchedule {
  double exponent_fast = 0.55;
  double exponent_slow = 0.85;
  int sample_batch = 10;

  void validate() const {
    if (!(exponent_fast > 0.5 && exponent_fast <= 1.0))
      throw Error(ErrorCode::precondition, "exponent_fast must lie in (0.5, 1]");
    if (!(exponent_slow > exponent_fast && exponent_slow <= 1.0))
      throw Error(ErrorCode::precondition, "exponent_slow must lie in (exponent_fast, 1]");
    if (sample_batch < 1) throw Error(ErrorCode::precondition, "sample_batch must be positive");
  }
};

struct StepSizes {
  double zeta1 = 1.0;  // slow, revenue
  double zeta2 = 1.0;  // fast, feasibility
};

inline StepSizes step_sizes(std::uint64_t visit_count, const StepSchedule& s) {
  const double base = 1.0 + static_cast<double>(visit_count);
  return {std::pow(base, -s.exponent_slow), std::pow(base, -s.exponent_fast)};
}

struct LearnerConfig {
  double eps_feas_learn = 0.05;
  bool shrink_tolerance = true;  // eps / sqrt(1 + visits at the state)
  int max_episodes = 1000;
  std::uint64_t max_updates = 0;  // 0: no cap
  int eval_every = 0;             // 0: no checkpoints
  int eval_trials = 100;
  double exploration_epsilon = 0.1;
  StepSchedule schedule;

  void validate() const {
    schedule.validate();
    if (!(eps_feas_learn >= 0.0)) throw Error(ErrorCode::precondition, "eps_feas_learn must be >= 0");
    if (max_episodes < 1) throw Error(ErrorCode::precondition, "max_episodes must be positive");
    if (eval_every < 0 || eval_trials < 0) throw Error(ErrorCode::precondition, "negative evaluation settings");
    if (!(exploration_epsilon >= 0.0 && exploration_epsilon <= 1.0))
      throw Error(ErrorCode::precondition, "exploration_epsilon must lie in [0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Q (feasibility) and H (revenue) tables keyed by state, rows created on
/// first write. Absorbing states never get a row and read as 0.
template <class State, class Action>
class LazyQPair {
 public:
  struct Row {
    std::vector<Action> actions;
    std::vector<double> q;
    std::vector<double> h;
    std::vector<std::uint64_t> visits;
    std::uint64_t state_visits = 0;

    int slot_of(const Action& a) const {
      auto it = std::lower_bound(actions.begin(), actions.end(), a);
      if (it == actions.end() || a < *it) return -1;
      return static_cast<int>(it - actions.begin());
    }
  };

  const Row* find(const State& s) const {
    auto it = rows_.find(s);
    return it == rows_.end() ? nullptr : &it->second;
  }

  template <SampledModel M>
  Row& row(const M& model, const State& s) {
    auto it = rows_.find(s);
    if (it != rows_.end()) return it->second;
    Row r;
    r.actions = model.actions(s);
    if (r.actions.empty()) throw Error(ErrorCode::precondition, "state without admissible actions");
    r.q.assign(r.actions.size(), 0.0);
    r.h.assign(r.actions.size(), 0.0);
    r.visits.assign(r.actions.size(), 0);
    return rows_.emplace(s, std::move(r)).first->second;
  }

  double q(const State& s, const Action& a) const { return value(s, a, &Row::q); }
  double h(const State& s, const Action& a) const { return value(s, a, &Row::h); }

  std::uint64_t visits(const State& s, const Action& a) const {
    const Row* r = find(s);
    if (!r) return 0;
    const int slot = r->slot_of(a);
    return slot < 0 ? 0 : r->visits[slot];
  }

  std::size_t size() const noexcept { return rows_.size(); }
  const std::unordered_map<State, Row>& rows() const noexcept { return rows_; }

  bool operator==(const LazyQPair& other) const {
    if (rows_.size() != other.rows_.size()) return false;
    for (const auto& [s, r] : rows_) {
      const Row* o = other.find(s);
      if (!o || o->actions != r.actions || o->q != r.q || o->h != r.h || o->visits != r.visits) return false;
    }
    return true;
  }

 private:
  double value(const State& s, const Action& a, std::vector<double> Row::*column) const {
    const Row* r = find(s);
    if (!r) return 0.0;
    const int slot = r->slot_of(a);
    return slot < 0 ? 0.0 : (r->*column)[slot];
  }

  std::unordered_map<State, Row> rows_;
};

namespace detail {

template <class Row>
double row_tolerance(const Row& r, const LearnerConfig& c) {
  if (!c.shrink_tolerance) return c.eps_feas_learn;
  return c.eps_feas_learn / std::sqrt(1.0 + static_cast<double>(r.state_visits));
}

// Noisy refined set; falls back to the (tolerant) argmin set when empty.
template <class Row>
std::vector<int> effective_slots(const Row& r, const LearnerConfig& c, bool* repaired = nullptr) {
  const double eps = row_tolerance(r, c);
  auto slots = feasible_slots(r.q, eps);
  if (repaired) *repaired = slots.empty();
  if (slots.empty()) slots = argmin_slots(r.q, eps);
  return slots;
}

template <class Row>
int greedy_slot(const Row& r, const LearnerConfig& c) {
  int best = -1;
  for (int u : effective_slots(r, c))
    if (best < 0 || r.h[u] > r.h[best]) best = u;
  return best;
}

}  // namespace detail

/// Continuation values of a successor state read by the learners: the
/// minimum of Q and the maximum of H over the noisy refined set.
template <class State, class Action>
struct Continuation {
  double q_min = 0.0;
  double h_max = 0.0;
};

template <class State, class Action>
Continuation<State, Action> continuation(const LazyQPair<State, Action>& t, const State& s, const LearnerConfig& c) {
  const auto* r = t.find(s);
  if (!r) return {};
  return {row_min(r->q), max_over(r->h, detail::effective_slots(*r, c))};
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

namespace detail {

template <SampledModel M>
void two_phase_update(const M& model, LazyQPair<typename M::state_type, typename M::action_type>& t,
                      typename LazyQPair<typename M::state_type, typename M::action_type>::Row& row,
                      const typename M::state_type& x, int slot, const LearnerConfig& c,
                      std::vector<Transition<typename M::state_type>>& samples, RngStream& rng) {
  const auto& u = row.actions[slot];
  const int n = c.schedule.sample_batch;
  samples.clear();
  double q_next = 0.0, h_next = 0.0, r_sum = 0.0, d_sum = 0.0;
  for (int m = 0; m < n; ++m) {
    samples.push_back(model.sample(x, u, rng));
    const auto& tr = samples.back();
    r_sum += tr.reward;
    d_sum += tr.cost;
    if (!model.is_absorbing(tr.next)) {
      const auto cont = continuation(t, tr.next, c);
      q_next += cont.q_min;
      h_next += cont.h_max;
    }
  }
  double reward = r_sum / n, cost = d_sum / n;
  if constexpr (ExactCostModel<M>) {
    reward = model.reward(x, u);
    cost = model.cost(x, u);
  }
  const double q_target = cost + q_next / n;
  const double h_target = reward + h_next / n;
  const auto z = step_sizes(row.visits[slot], c.schedule);
  row.q[slot] += z.zeta2 * (q_target - row.q[slot]);
  row.h[slot] += z.zeta1 * (h_target - row.h[slot]);
  ++row.visits[slot];
  ++row.state_visits;
}

}  // namespace detail

/// One synchronous sweep: every transient (x,u) gets N fresh successor
/// samples and one stochastic-approximation step on both tables.
///
/// States are swept in increasing stage order. Targets only read strictly
/// later stages, so every target sees the tables as they were at the start
/// of the sweep, which makes the in-place sweep identical to a Jacobi update.
template <EnumerableModel M>
std::uint64_t sync_sweep(const M& model, LazyQPair<typename M::state_type, typename M::action_type>& t,
                         const LearnerConfig& c, RngStream& rng) {
  auto states = model.transient_states();
  std::stable_sort(states.begin(), states.end(),
                   [&model](const auto& a, const auto& b) { return model.stage(a) < model.stage(b); });
  std::vector<Transition<typename M::state_type>> samples;
  std::uint64_t updates = 0;
  for (const auto& x : states) {
    auto& row = t.row(model, x);
    for (int slot = 0; slot < static_cast<int>(row.actions.size()); ++slot) {
      detail::two_phase_update(model, t, row, x, slot, c, samples, rng);
      ++updates;
    }
  }
  return updates;
}

// ---------------------------------------------------------------------------
// Policies
// ---------------------------------------------------------------------------

/// Action choice: epsilon-greedy over admissible actions; the greedy part is
/// argmax H over the noisy refined set (smallest action on ties), or over the
/// least-violating actions when that set is empty.
template <SampledModel M>
typename M::action_type select_action(const M& model,
                                      const LazyQPair<typename M::state_type, typename M::action_type>& t,
                                      const typename M::state_type& x, const LearnerConfig& c, RngStream& rng) {
  const auto* row = t.find(x);
  std::vector<typename M::action_type> fresh;
  const auto& actions = row ? row->actions : (fresh = model.actions(x));
  if (c.exploration_epsilon > 0.0 && rng.uniform() < c.exploration_epsilon)
    return actions[rng.below(actions.size())];
  if (!row) return actions.front();
  return actions[detail::greedy_slot(*row, c)];
}

/// Greedy policy read from learned tables; unseen states get the smallest
/// admissible action.
template <SampledModel M>
class LearnedPolicy {
 public:
  using table_type = LazyQPair<typename M::state_type, typename M::action_type>;

  LearnedPolicy(const M& model, const table_type& tables, LearnerConfig config)
      : model_(&model), tables_(&tables), config_(config) {
    config_.exploration_epsilon = 0.0;
  }

  typename M::action_type operator()(const typename M::state_type& x) const {
    const auto* row = tables_->find(x);
    if (!row) return model_->actions(x).front();
    return row->actions[detail::greedy_slot(*row, config_)];
  }

 private:
  const M* model_;
  const table_type* tables_;
  LearnerConfig config_;
};

template <SampledModel M>
LearnedPolicy<M> extract_learned_policy(const M& model,
                                        const LazyQPair<typename M::state_type, typename M::action_type>& t,
                                        const LearnerConfig& c) {
  return LearnedPolicy<M>(model, t, c);
}

/// Materializes a learned policy on an explicit model.
inline DeterministicPolicy to_deterministic(const ExplicitCmdp& m, const LearnedPolicy<ExplicitModel>& p) {
  DeterministicPolicy out{std::vector<int>(m.state_count(), -1)};
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
    if (!m.is_absorbing(x)) out.action_of[x] = p(x);
  return out;
}

// ---------------------------------------------------------------------------
// Logs
// ---------------------------------------------------------------------------

struct LogRow {
  std::uint64_t update_count = 0;
  int episode = 0;
  std::optional<double> xi_q_error;
  std::optional<double> xi_h_error;
  std::optional<double> mc_mean_reward;
  std::optional<double> mc_mean_constraint;
  std::optional<double> wallclock_seconds;
  std::optional<double> lambda;
};

struct LearningLog {
  std::vector<LogRow> rows;
  bool has_lambda = false;
};

inline void write_log_csv(std::ostream& out, const LearningLog& log) {
  if (log.rows.empty()) throw Error(ErrorCode::precondition, "learning log is empty");
  auto cell = [&out](const std::optional<double>& v) {
    out << ',';
    if (v) out << format_real(*v);
  };
  out << "update_count,episode,xi_norm_q_error,xi_norm_h_error,mc_mean_reward,mc_mean_constraint,wallclock_seconds";
  if (log.has_lambda) out << ",lambda";
  out << '\n';
  for (const auto& r : log.rows) {
    out << r.update_count << ',' << r.episode;
    cell(r.xi_q_error);
    cell(r.xi_h_error);
    cell(r.mc_mean_reward);
    cell(r.mc_mean_constraint);
    cell(r.wallclock_seconds);
    if (log.has_lambda) cell(r.lambda);
    out << '\n';
  }
}

/// Optional instrumentation for training loops.
template <class State, class Action>
struct TrainHooks {
  /// xi-norm errors (Q, H) against a reference solution.
  std::function<std::pair<double, double>(const LazyQPair<State, Action>&)> reference_error;
  /// Evaluation stream; the same block is reused at every checkpoint.
  std::optional<RngStream> eval_rng;
  bool record_wallclock = false;
};

template <class State, class Action>
struct TrainResult {
  LazyQPair<State, Action> tables;
  LearningLog log;
  int episodes = 0;
  std::uint64_t updates = 0;
  std::vector<int> episode_lengths;  // async only
};

namespace detail {

template <SampledModel M, class Hooks, class Clock>
LogRow checkpoint(const M& model, const LazyQPair<typename M::state_type, typename M::action_type>& t,
                  const LearnerConfig& c, const Hooks& hooks, std::uint64_t updates, int episode,
                  typename Clock::time_point start) {
  LogRow row;
  row.update_count = updates;
  row.episode = episode;
  if (hooks.reference_error) {
    const auto [eq, eh] = hooks.reference_error(t);
    row.xi_q_error = eq;
    row.xi_h_error = eh;
  }
  if (hooks.eval_rng && c.eval_trials > 0) {
    const auto res = mc_evaluate(model, extract_learned_policy(model, t, c), c.eval_trials, *hooks.eval_rng);
    row.mc_mean_reward = res.mean_reward;
    row.mc_mean_constraint = res.mean_constraint;
  }
  if (hooks.record_wallclock)
    row.wallclock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  return row;
}

}  // namespace detail

/// Synchronous two-phase Q-learning: `max_episodes` full sweeps.
template <EnumerableModel M>
TrainResult<typename M::state_type, typename M::action_type> train_sync(
    const M& model, const LearnerConfig& c, RngStream& rng,
    const TrainHooks<typename M::state_type, typename M::action_type>& hooks = {}) {
  c.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  TrainResult<typename M::state_type, typename M::action_type> res;
  for (int sweep = 1; sweep <= c.max_episodes; ++sweep) {
    res.updates += sync_sweep(model, res.tables, c, rng);
    res.episodes = sweep;
    if (c.eval_every > 0 && sweep % c.eval_every == 0)
      res.log.rows.push_back(detail::checkpoint<M, decltype(hooks), Clock>(model, res.tables, c, hooks,
                                                                           res.updates, sweep, start));
    if (c.max_updates > 0 && res.updates >= c.max_updates) break;
  }
  return res;
}

/// Asynchronous two-phase Q-learning along simulated episodes; the state is
/// reset to a fresh initial state after every absorption.
template <SampledModel M>
TrainResult<typename M::state_type, typename M::action_type> train_async(
    const M& model, const LearnerConfig& c, RngStream& rng,
    const TrainHooks<typename M::state_type, typename M::action_type>& hooks = {}) {
  c.validate();
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  TrainResult<typename M::state_type, typename M::action_type> res;
  std::vector<Transition<typename M::state_type>> samples;
  bool capped = false;
  for (int episode = 1; episode <= c.max_episodes && !capped; ++episode) {
    auto x = model.sample_initial(rng);
    int length = 0;
    while (!model.is_absorbing(x)) {
      const auto u = select_action(model, res.tables, x, c, rng);
      auto& row = res.tables.row(model, x);
      detail::two_phase_update(model, res.tables, row, x, row.slot_of(u), c, samples, rng);
      ++res.updates;
      ++length;
      x = samples.front().next;
      if (c.max_updates > 0 && res.updates >= c.max_updates) {
        capped = true;
        break;
      }
    }
    res.episodes = episode;
    res.episode_lengths.push_back(length);
    if (c.eval_every > 0 && episode % c.eval_every == 0)
      res.log.rows.push_back(detail::checkpoint<M, decltype(hooks), Clock>(model, res.tables, c, hooks,
                                                                           res.updates, episode, start));
  }
  return res;
}

// ---------------------------------------------------------------------------
// Comparison against an exact solution and snapshots
// ---------------------------------------------------------------------------

/// xi-norm errors of learned tables against Q* and H* over all transient
/// admissible pairs (missing rows count as zeros).
inline std::pair<double, double> xi_errors(const ExplicitCmdp& m, const LazyQPair<int, int>& t, const QTable& q_star,
                                           const QTable& h_star) {
  const auto xi = XiNorm::for_model(m);
  double eq = 0.0, eh = 0.0;
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    const auto& acts = m.actions_at(x);
    for (std::size_t u = 0; u < acts.size(); ++u) {
      eq = std::max(eq, std::abs(t.q(x, acts[u].id) - q_star.values[x][u]) / xi.weights[x]);
      eh = std::max(eh, std::abs(t.h(x, acts[u].id) - h_star.values[x][u]) / xi.weights[x]);
    }
  }
  return {eq, eh};
}

inline std::string to_key(int v) { return std::to_string(v); }

/// Table snapshot in the report format, rows sorted by key.
template <class State, class Action>
TableReport snapshot_report(const LazyQPair<State, Action>& t, const LearnerConfig& c, int horizon) {
  TableReport r;
  r.horizon = horizon;
  for (const auto& [s, row] : t.rows()) {
    ReportState st;
    st.key = to_key(s);
    st.v = row_min(row.q);
    bool repaired = false;
    const auto slots = detail::effective_slots(row, c, &repaired);
    st.w = max_over(row.h, slots);
    st.ufs.assign(row.actions.size(), '0');
    if (!repaired)
      for (int u : slots) st.ufs[static_cast<std::size_t>(u)] = '1';
    for (std::size_t u = 0; u < row.actions.size(); ++u)
      st.entries.push_back({to_key(row.actions[u]), row.q[u], row.h[u]});
    r.states.push_back(std::move(st));
  }
  std::sort(r.states.begin(), r.states.end(), [](const auto& a, const auto& b) { return a.key < b.key; });
  return r;
}

}  // namespace cmdp
