#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "cmdp/dp.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/random_cmdp.hpp"
#include "cmdp/rng.hpp"

namespace fixtures {

using cmdp::ActionRecord;
using cmdp::ExplicitCmdp;

inline std::string source_path(const std::string& rel) { return std::string(CMDP_SOURCE_DIR) + "/" + rel; }

struct Toy {
  ExplicitCmdp m;
  int s0 = 0;
  int end = 1;
};

/// One transient state s0 with actions a (id 0) and b (id 1), both straight to END.
inline Toy toy(double d_a = -1.0, double r_a = 1.0, double d_b = 1.0, double r_b = 5.0) {
  Toy t;
  t.m.horizon = 1;
  t.s0 = t.m.add_state(0, false);
  t.end = t.m.add_absorbing_state();
  t.m.initial_state = t.s0;
  t.m.add_action(t.s0, ActionRecord{0, r_a, d_a, {{t.end, 1.0}}});
  t.m.add_action(t.s0, ActionRecord{1, r_b, d_b, {{t.end, 1.0}}});
  return t;
}

/// s0 -> s1 -> END with a single action; D = (+2, -1).
inline ExplicitCmdp chain3() {
  ExplicitCmdp m;
  m.horizon = 2;
  const int s0 = m.add_state(0, false), s1 = m.add_state(1, false), end = m.add_absorbing_state();
  m.initial_state = s0;
  m.add_action(s0, ActionRecord{0, 0.0, 2.0, {{s1, 1.0}}});
  m.add_action(s1, ActionRecord{0, 0.0, -1.0, {{end, 1.0}}});
  return m;
}

/// s0 branches 50/50 to s1 (reward 0) or s2 (reward 2), both then end.
inline ExplicitCmdp branch() {
  ExplicitCmdp m;
  m.horizon = 2;
  const int s0 = m.add_state(0, false), s1 = m.add_state(1, false), s2 = m.add_state(1, false);
  const int end = m.add_absorbing_state();
  m.initial_state = s0;
  m.add_action(s0, ActionRecord{0, 0.0, 0.0, {{s1, 0.5}, {s2, 0.5}}});
  m.add_action(s1, ActionRecord{0, 0.0, 0.0, {{end, 1.0}}});
  m.add_action(s2, ActionRecord{0, 2.0, 0.0, {{end, 1.0}}});
  return m;
}

/// Two transient states with stochastic transitions and two actions each.
inline ExplicitCmdp two_state() {
  ExplicitCmdp m;
  m.horizon = 2;
  const int s0 = m.add_state(0, false), s1 = m.add_state(1, false), end = m.add_absorbing_state();
  m.initial_state = s0;
  m.add_action(s0, ActionRecord{0, 1.0, -0.5, {{s1, 0.3}, {end, 0.7}}});
  m.add_action(s0, ActionRecord{1, 2.0, 0.5, {{s1, 0.8}, {end, 0.2}}});
  m.add_action(s1, ActionRecord{0, 0.5, -1.0, {{end, 1.0}}});
  m.add_action(s1, ActionRecord{1, 3.0, 1.0, {{end, 1.0}}});
  return m;
}

inline cmdp::RandomCmdpParams small_params(cmdp::RngStream& rng) {
  cmdp::RandomCmdpParams p;
  p.horizon = 3 + static_cast<int>(rng.below(4));
  p.transient_states = p.horizon + static_cast<int>(rng.below(static_cast<std::uint64_t>(12 - p.horizon)));
  p.min_actions = 2;
  p.max_actions = 3;
  return p;
}

/// Shifts every transient state's costs by their minimum, so all costs are
/// nonnegative and the optimal constraint value is zero everywhere. The
/// feasible policies are then exactly those taking zero-cost actions on
/// every reachable state.
inline ExplicitCmdp make_binding(ExplicitCmdp m) {
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    auto& acts = m.actions[static_cast<std::size_t>(x)];
    double lo = acts.front().cost;
    for (const auto& a : acts) lo = std::min(lo, a.cost);
    for (auto& a : acts) a.cost -= lo;
  }
  return m;
}

/// Random instance with product of action counts at most `max_policies`.
inline ExplicitCmdp random_small(cmdp::RngStream& rng, double max_policies = 2e5) {
  for (;;) {
    auto m = cmdp::random_episodic_cmdp(small_params(rng), rng);
    double product = 1.0;
    for (int x = 0; x < static_cast<int>(m.state_count()); ++x)
      if (!m.is_absorbing(x)) product *= static_cast<double>(m.actions_at(x).size());
    if (product <= max_policies) return m;
  }
}

}  // namespace fixtures
