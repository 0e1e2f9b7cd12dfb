#pragma once

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/model.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

template <class State, class Action>
struct TrajectoryStep {
  State state;
  Action action;
  double reward = 0.0;
  double cost = 0.0;
};

template <class State, class Action>
struct Trajectory {
  std::vector<TrajectoryStep<State, Action>> steps;
  State terminal_state{};

  double total_reward() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.reward;
    return s;
  }
  double total_cost() const {
    double s = 0.0;
    for (const auto& st : steps) s += st.cost;
    return s;
  }
};

/// Rolls one episode from a freshly sampled initial state until the first
/// absorbing state. `policy(state)` returns an admissible action and may
/// throw policy-undefined.
template <SampledModel M, class Policy>
Trajectory<typename M::state_type, typename M::action_type> sample_trajectory(const M& model,
                                                                              const Policy& policy,
                                                                              RngStream& rng) {
  Trajectory<typename M::state_type, typename M::action_type> traj;
  auto x = model.sample_initial(rng);
  const int limit = model.horizon();
  while (!model.is_absorbing(x)) {
    if (static_cast<int>(traj.steps.size()) >= limit)
      throw Error(ErrorCode::precondition, "trajectory did not absorb within the horizon");
    const typename M::action_type u = policy(x);
    auto tr = model.sample(x, u, rng);
    traj.steps.push_back({x, u, tr.reward, tr.cost});
    x = std::move(tr.next);
  }
  traj.terminal_state = std::move(x);
  return traj;
}

struct TrialRecord {
  double total_reward = 0.0;
  double total_cost = 0.0;
  int length = 0;
};

struct McResult {
  double mean_reward = 0.0;
  double mean_constraint = 0.0;
  double se_reward = 0.0;
  double se_constraint = 0.0;
  std::vector<TrialRecord> records;

  /// Feasibility flag used by comparison tables: mean constraint within
  /// two standard errors of zero.
  bool feasible(double slack_se = 2.0) const { return mean_constraint <= slack_se * se_constraint; }
};

namespace detail {

inline void finalize_means(McResult& out) {
  const std::size_t n = out.records.size();
  std::vector<double> r(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    r[i] = out.records[i].total_reward;
    c[i] = out.records[i].total_cost;
  }
  out.mean_reward = pairwise_sum(r) / static_cast<double>(n);
  out.mean_constraint = pairwise_sum(c) / static_cast<double>(n);
  if (n > 1) {
    for (std::size_t i = 0; i < n; ++i) {
      r[i] = (r[i] - out.mean_reward) * (r[i] - out.mean_reward);
      c[i] = (c[i] - out.mean_constraint) * (c[i] - out.mean_constraint);
    }
    const double denom = static_cast<double>(n - 1) * static_cast<double>(n);
    out.se_reward = std::sqrt(pairwise_sum(r) / denom);
    out.se_constraint = std::sqrt(pairwise_sum(c) / denom);
  }
}

}  // namespace detail

/// Monte Carlo evaluation. Trial i runs on `rng.split(i)`, so the result is
/// independent of how trials are distributed over `workers` threads.
template <SampledModel M, class Policy>
McResult mc_evaluate(const M& model, const Policy& policy, int trials, const RngStream& rng,
                     int workers = 1) {
  if (trials < 1) throw Error(ErrorCode::precondition, "trials must be positive");
  McResult out;
  out.records.resize(static_cast<std::size_t>(trials));
  auto run_range = [&](int begin, int end) {
    for (int i = begin; i < end; ++i) {
      RngStream trial_rng = rng.split(static_cast<std::uint64_t>(i));
      const auto traj = sample_trajectory(model, policy, trial_rng);
      out.records[i] = {traj.total_reward(), traj.total_cost(), static_cast<int>(traj.steps.size())};
    }
  };
  workers = std::clamp(workers, 1, trials);
  if (workers == 1) {
    run_range(0, trials);
  } else {
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::jthread> pool;
    const int chunk = (trials + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const int begin = w * chunk;
      const int end = std::min(trials, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        try {
          run_range(begin, end);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      });
    }
    pool.clear();
    if (failure) std::rethrow_exception(failure);
  }
  detail::finalize_means(out);
  return out;
}

/// Exact expected totals (reward, constraint cost) of a deterministic policy
/// from every state, by backward recursion over the stage order.
struct PolicyValues {
  std::vector<double> reward;
  std::vector<double> cost;
};

inline PolicyValues evaluate_policy_exact(const ExplicitCmdp& m, const DeterministicPolicy& policy) {
  PolicyValues v{std::vector<double>(m.state_count(), 0.0), std::vector<double>(m.state_count(), 0.0)};
  for (int x : m.backward_order()) {
    const int slot = m.slot_of(x, policy(x));
    if (slot < 0)
      throw Error(ErrorCode::precondition, "policy action is not admissible at state " + std::to_string(x));
    const auto& a = m.actions_at(x)[slot];
    double r = a.reward, c = a.cost;
    for (const auto& [y, p] : a.next) {
      if (m.is_absorbing(y)) continue;
      r += p * v.reward[y];
      c += p * v.cost[y];
    }
    v.reward[x] = r;
    v.cost[x] = c;
  }
  return v;
}

}  // namespace cmdp
