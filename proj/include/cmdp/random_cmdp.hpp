#pragma once

#include <algorithm>
#include <numeric>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

struct RandomCmdpParams {
  int transient_states = 8;  // including the initial state
  int horizon = 4;
  int min_actions = 2;
  int max_actions = 3;
  int max_branch = 3;        // distinct successors per action
  double early_stop = 0.1;   // chance an action may also terminate early
  double cost_lo = -1.0;
  double cost_hi = 1.0;
  double reward_lo = 0.0;
  double reward_hi = 1.0;
};

/// Random layered episodic CMDP: the initial state alone on stage 0, the
/// remaining transient states spread over stages 1..T-1 (each nonempty),
/// one absorbing END state. Every transient state has a predecessor, so all
/// states are reachable from x0 under some policy.
inline ExplicitCmdp random_episodic_cmdp(const RandomCmdpParams& p, RngStream& rng) {
  if (p.horizon < 1 || p.transient_states < p.horizon || p.min_actions < 1 || p.max_actions < p.min_actions ||
      p.max_branch < 1)
    throw Error(ErrorCode::precondition, "inconsistent random CMDP parameters");

  std::vector<int> per_stage(static_cast<std::size_t>(p.horizon), 1);
  if (p.horizon == 1) {
    per_stage[0] = p.transient_states;
  } else {
    for (int extra = p.transient_states - p.horizon; extra > 0; --extra)
      ++per_stage[1 + rng.below(static_cast<std::uint64_t>(p.horizon - 1))];
  }

  ExplicitCmdp m;
  m.horizon = p.horizon;
  std::vector<std::vector<int>> layer(static_cast<std::size_t>(p.horizon));
  for (int t = 0; t < p.horizon; ++t)
    for (int i = 0; i < per_stage[t]; ++i) layer[t].push_back(m.add_state(t, false));
  const int end = m.add_absorbing_state();
  m.initial_state = layer[0].front();

  std::vector<int> incoming(m.state_count(), 0);
  for (int t = 0; t < p.horizon; ++t) {
    const std::vector<int> targets = t + 1 < p.horizon ? layer[t + 1] : std::vector<int>{end};
    for (int x : layer[t]) {
      const int n_act = p.min_actions + static_cast<int>(rng.below(static_cast<std::uint64_t>(p.max_actions - p.min_actions + 1)));
      for (int id = 0; id < n_act; ++id) {
        std::vector<int> pool = targets;
        rng.shuffle(pool);
        const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(std::min<int>(p.max_branch, static_cast<int>(pool.size())))));
        pool.resize(static_cast<std::size_t>(k));
        if (t + 1 < p.horizon && rng.bernoulli(p.early_stop)) pool.push_back(end);
        std::vector<double> w(pool.size());
        for (auto& wi : w) wi = 0.2 + rng.uniform();
        const double total = std::accumulate(w.begin(), w.end(), 0.0);
        ActionRecord a;
        a.id = id;
        a.cost = rng.uniform(p.cost_lo, p.cost_hi);
        a.reward = rng.uniform(p.reward_lo, p.reward_hi);
        for (std::size_t i = 0; i < pool.size(); ++i) {
          a.next.emplace_back(pool[i], w[i] / total);
          ++incoming[pool[i]];
        }
        std::sort(a.next.begin(), a.next.end());
        m.add_action(x, std::move(a));
      }
    }
    // Give every next-stage state a predecessor.
    if (t + 1 < p.horizon) {
      for (int y : layer[t + 1]) {
        if (incoming[y] > 0) continue;
        const int x = layer[t][rng.below(layer[t].size())];
        auto& acts = m.actions[static_cast<std::size_t>(x)];
        auto& a = acts[rng.below(acts.size())];
        const double share = 1.0 / static_cast<double>(a.next.size() + 1);
        for (auto& [z, prob] : a.next) prob *= (1.0 - share);
        a.next.emplace_back(y, share);
        std::sort(a.next.begin(), a.next.end());
        ++incoming[y];
      }
    }
  }
  return m;
}

}  // namespace cmdp
