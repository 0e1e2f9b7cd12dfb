#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/model.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

/// Admissible action u at a state, with R(x,u), D(x,u) and the sparse row of
/// P(. | x, u).
struct ActionRecord {
  int id = 0;
  double reward = 0.0;
  double cost = 0.0;
  std::vector<std::pair<int, double>> next;
};

/// Fully enumerated finite-horizon CMDP.
///
/// Each state carries its time counter (`stage`). Transient states live on
/// stages 0..horizon-1 and transient successors sit on a strictly later
/// stage; absorbing states sit on stage `horizon`, loop to themselves and
/// earn nothing. Actions at a state are stored in ascending id order.
struct ExplicitCmdp {
  int horizon = 1;
  int initial_state = 0;
  std::vector<int> stage;
  std::vector<char> absorbing;
  std::vector<std::vector<ActionRecord>> actions;

  std::size_t state_count() const noexcept { return actions.size(); }
  bool is_absorbing(int x) const { return absorbing[static_cast<std::size_t>(x)] != 0; }

  const std::vector<ActionRecord>& actions_at(int x) const {
    return actions[static_cast<std::size_t>(x)];
  }

  /// Position of `action_id` within actions_at(x), or -1 when inadmissible.
  int slot_of(int x, int action_id) const {
    const auto& acts = actions_at(x);
    auto it = std::lower_bound(acts.begin(), acts.end(), action_id,
                               [](const ActionRecord& r, int id) { return r.id < id; });
    if (it == acts.end() || it->id != action_id) return -1;
    return static_cast<int>(it - acts.begin());
  }

  /// Transient states ordered by decreasing stage, i.e. a valid order for
  /// backward recursion.
  std::vector<int> backward_order() const {
    std::vector<int> order;
    for (int x = 0; x < static_cast<int>(state_count()); ++x)
      if (!is_absorbing(x)) order.push_back(x);
    std::stable_sort(order.begin(), order.end(),
                     [this](int a, int b) { return stage[a] > stage[b]; });
    return order;
  }

  /// Adds a state and returns its index.
  int add_state(int stage_index, bool is_absorbing_state) {
    stage.push_back(stage_index);
    absorbing.push_back(is_absorbing_state ? 1 : 0);
    actions.emplace_back();
    return static_cast<int>(actions.size()) - 1;
  }

  /// Absorbing state with its zero-reward, zero-cost self loop.
  int add_absorbing_state() {
    const int x = add_state(horizon, true);
    actions.back().push_back(ActionRecord{0, 0.0, 0.0, {{x, 1.0}}});
    return x;
  }

  void add_action(int x, ActionRecord record) {
    auto& acts = actions[static_cast<std::size_t>(x)];
    auto it = std::lower_bound(acts.begin(), acts.end(), record.id,
                               [](const ActionRecord& r, int id) { return r.id < id; });
    acts.insert(it, std::move(record));
  }
};

/// Returns one message per violated invariant; empty iff the model is valid.
inline std::vector<std::string> validate_model(const ExplicitCmdp& m, double tol = 1e-12) {
  std::vector<std::string> report;
  auto fail = [&report](std::string msg) { report.push_back(std::move(msg)); };
  const int n = static_cast<int>(m.state_count());

  if (n == 0) {
    fail("shape: model has no states");
    return report;
  }
  if (m.horizon < 1) fail("shape: horizon must be positive");
  if (static_cast<int>(m.stage.size()) != n || static_cast<int>(m.absorbing.size()) != n) {
    fail("shape: stage/absorbing arrays do not match state count");
    return report;
  }
  if (m.initial_state < 0 || m.initial_state >= n) fail("shape: initial state out of range");

  bool graph_ok = true;
  for (int x = 0; x < n; ++x) {
    const auto& acts = m.actions_at(x);
    const std::string where = "state " + std::to_string(x);
    if (acts.empty()) {
      fail("actions: " + where + " has no admissible action");
      continue;
    }
    for (std::size_t i = 1; i < acts.size(); ++i)
      if (acts[i - 1].id >= acts[i].id) fail("actions: " + where + " ids not strictly ascending");

    if (m.is_absorbing(x)) {
      if (m.stage[x] != m.horizon) fail("stage: absorbing " + where + " is not on the final stage");
    } else if (m.stage[x] < 0 || m.stage[x] >= m.horizon) {
      fail("stage: transient " + where + " has stage outside [0, horizon)");
    }

    for (const auto& a : acts) {
      const std::string pair = where + " action " + std::to_string(a.id);
      double total = 0.0;
      for (const auto& [y, p] : a.next) {
        if (y < 0 || y >= n) {
          fail("transition: " + pair + " points outside the state space");
          graph_ok = false;
          continue;
        }
        if (!(p >= 0.0)) fail("transition: " + pair + " has a negative probability");
        total += p;
        if (!m.is_absorbing(x) && !m.is_absorbing(y) && m.stage[y] <= m.stage[x])
          fail("stage: " + pair + " reaches a transient state without advancing the time counter");
      }
      if (std::abs(total - 1.0) > tol) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.17g", total);
        fail("stochasticity: " + pair + " row sums to " + buf);
      }
      if (m.is_absorbing(x)) {
        const bool self_loop = a.next.size() == 1 && a.next[0].first == x &&
                               std::abs(a.next[0].second - 1.0) <= tol;
        if (!self_loop) fail("absorbing: " + pair + " does not stay put with probability 1");
        if (a.reward != 0.0) fail("absorbing-zero-reward: " + pair + " has nonzero reward");
        if (a.cost != 0.0) fail("absorbing-zero-cost: " + pair + " has nonzero constraint cost");
      }
      if (!std::isfinite(a.reward) || !std::isfinite(a.cost))
        fail("finite: " + pair + " has a non-finite reward or cost");
    }
  }
  if (!graph_ok) return report;

  // Reachability of the absorbing set: longest support path through
  // transient states, computed by memoized DFS with cycle detection.
  std::vector<int> depth(n, -1);
  std::vector<char> on_stack(n, 0);
  bool cyclic = false;
  auto longest = [&](auto&& self, int x) -> int {
    if (m.is_absorbing(x)) return 0;
    if (depth[x] >= 0) return depth[x];
    if (on_stack[x]) {
      cyclic = true;
      return 0;
    }
    on_stack[x] = 1;
    int best = 0;
    for (const auto& a : m.actions_at(x))
      for (const auto& [y, p] : a.next)
        if (p > 0.0) best = std::max(best, self(self, y));
    on_stack[x] = 0;
    depth[x] = best + 1;
    return depth[x];
  };
  for (int x = 0; x < n; ++x) {
    if (m.actions_at(x).empty()) continue;
    const int steps = longest(longest, x);
    if (!cyclic && steps > m.horizon)
      fail("absorption: state " + std::to_string(x) + " may need " + std::to_string(steps) +
           " steps to reach the absorbing set (horizon " + std::to_string(m.horizon) + ")");
  }
  if (cyclic) fail("absorption: transient states form a cycle; absorption is not guaranteed");
  return report;
}

inline void require_valid(const ExplicitCmdp& m) {
  const auto report = validate_model(m);
  if (!report.empty()) throw Error(ErrorCode::precondition, "invalid model: " + report.front());
}

// ---------------------------------------------------------------------------
// Text format
//
//   cmdp-explicit 1
//   states <n> horizon <T> initial <x0>
//   state <x> stage <t> absorbing <0|1> actions <m>
//   action <id> reward <r> cost <c> next <k> (<y> <p>){k}
//
// Reals are printed with 17 significant digits so a write/read cycle is exact.
// ---------------------------------------------------------------------------

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_explicit(std::ostream& out, const ExplicitCmdp& m) {
  out << "cmdp-explicit 1\n";
  out << "states " << m.state_count() << " horizon " << m.horizon << " initial "
      << m.initial_state << "\n";
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    const auto& acts = m.actions_at(x);
    out << "state " << x << " stage " << m.stage[x] << " absorbing "
        << (m.is_absorbing(x) ? 1 : 0) << " actions " << acts.size() << "\n";
    for (const auto& a : acts) {
      out << "action " << a.id << " reward " << format_real(a.reward) << " cost "
          << format_real(a.cost) << " next " << a.next.size();
      for (const auto& [y, p] : a.next) out << ' ' << y << ' ' << format_real(p);
      out << "\n";
    }
  }
}

namespace detail {

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  void expect(const char* keyword) {
    std::string tok;
    if (!(in_ >> tok) || tok != keyword)
      throw Error(ErrorCode::parse_error, std::string("expected '") + keyword + "', got '" + tok + "'");
  }

  long long integer() {
    std::string tok;
    if (!(in_ >> tok)) throw Error(ErrorCode::parse_error, "unexpected end of input");
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw Error(ErrorCode::parse_error, "bad integer '" + tok + "'");
    return v;
  }

  double real() {
    std::string tok;
    if (!(in_ >> tok)) throw Error(ErrorCode::parse_error, "unexpected end of input");
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != tok.size()) throw Error(ErrorCode::parse_error, "bad real '" + tok + "'");
    return v;
  }

  bool at_end() {
    in_ >> std::ws;
    return in_.eof();
  }

 private:
  std::istream& in_;
};

}  // namespace detail

inline ExplicitCmdp read_explicit(std::istream& in) {
  detail::TokenReader rd(in);
  rd.expect("cmdp-explicit");
  if (rd.integer() != 1) throw Error(ErrorCode::parse_error, "unsupported format version");
  ExplicitCmdp m;
  rd.expect("states");
  const long long n = rd.integer();
  if (n < 1 || n > 100'000'000) throw Error(ErrorCode::parse_error, "bad state count");
  rd.expect("horizon");
  m.horizon = static_cast<int>(rd.integer());
  rd.expect("initial");
  m.initial_state = static_cast<int>(rd.integer());
  m.stage.resize(n);
  m.absorbing.resize(n);
  m.actions.resize(n);
  for (long long x = 0; x < n; ++x) {
    rd.expect("state");
    if (rd.integer() != x) throw Error(ErrorCode::parse_error, "states must be listed in order");
    rd.expect("stage");
    m.stage[x] = static_cast<int>(rd.integer());
    rd.expect("absorbing");
    m.absorbing[x] = rd.integer() != 0 ? 1 : 0;
    rd.expect("actions");
    const long long count = rd.integer();
    if (count < 0) throw Error(ErrorCode::parse_error, "negative action count");
    for (long long i = 0; i < count; ++i) {
      ActionRecord a;
      rd.expect("action");
      a.id = static_cast<int>(rd.integer());
      rd.expect("reward");
      a.reward = rd.real();
      rd.expect("cost");
      a.cost = rd.real();
      rd.expect("next");
      const long long k = rd.integer();
      if (k < 0) throw Error(ErrorCode::parse_error, "negative successor count");
      for (long long j = 0; j < k; ++j) {
        const int y = static_cast<int>(rd.integer());
        const double p = rd.real();
        a.next.emplace_back(y, p);
      }
      m.actions[x].push_back(std::move(a));
    }
  }
  if (!rd.at_end()) throw Error(ErrorCode::parse_error, "trailing content after last state");
  return m;
}

/// Deterministic stationary policy over an ExplicitCmdp: one action id per
/// transient state, -1 where undefined.
struct DeterministicPolicy {
  std::vector<int> action_of;

  int operator()(int x) const {
    const int a = x >= 0 && x < static_cast<int>(action_of.size()) ? action_of[x] : -1;
    if (a < 0)
      throw Error(ErrorCode::policy_undefined, "no action assigned at state " + std::to_string(x));
    return a;
  }

  bool operator==(const DeterministicPolicy&) const = default;
};

/// Checks that `policy` picks an admissible action at every transient state.
inline bool is_admissible(const ExplicitCmdp& m, const DeterministicPolicy& policy) {
  if (policy.action_of.size() != m.state_count()) return false;
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
    if (!m.is_absorbing(x) && m.slot_of(x, policy.action_of[x]) < 0) return false;
  return true;
}

/// SampledModel view of an ExplicitCmdp. States are indices, actions are ids.
class ExplicitModel {
 public:
  using state_type = int;
  using action_type = int;

  explicit ExplicitModel(const ExplicitCmdp& m) : m_(&m) {}

  const ExplicitCmdp& cmdp() const noexcept { return *m_; }

  int sample_initial(RngStream&) const { return m_->initial_state; }
  bool is_absorbing(int x) const { return m_->is_absorbing(x); }
  int horizon() const { return m_->horizon; }
  int stage(int x) const { return m_->stage[x]; }

  std::vector<int> actions(int x) const {
    std::vector<int> ids;
    for (const auto& a : m_->actions_at(x)) ids.push_back(a.id);
    return ids;
  }

  std::vector<int> transient_states() const {
    std::vector<int> xs;
    for (int x = 0; x < static_cast<int>(m_->state_count()); ++x)
      if (!m_->is_absorbing(x)) xs.push_back(x);
    return xs;
  }

  double reward(int x, int a) const { return record(x, a).reward; }
  double cost(int x, int a) const { return record(x, a).cost; }

  Transition<int> sample(int x, int a, RngStream& rng) const {
    const auto& r = record(x, a);
    Transition<int> t{r.next.back().first, r.reward, r.cost};
    if (r.next.size() > 1) {
      const double u = rng.uniform();
      double acc = 0.0;
      for (const auto& [y, p] : r.next) {
        acc += p;
        if (u < acc) {
          t.next = y;
          break;
        }
      }
    }
    return t;
  }

 private:
  const ActionRecord& record(int x, int a) const {
    const int slot = m_->slot_of(x, a);
    if (slot < 0)
      throw Error(ErrorCode::precondition,
                  "action " + std::to_string(a) + " is not admissible at state " + std::to_string(x));
    return m_->actions_at(x)[slot];
  }

  const ExplicitCmdp* m_;
};

static_assert(ExactCostModel<ExplicitModel> && EnumerableModel<ExplicitModel>);

}  // namespace cmdp
