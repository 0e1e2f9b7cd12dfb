#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/evaluation.hpp"
#include "cmdp/learn.hpp"
#include "cmdp/model.hpp"
#include "cmdp/rng.hpp"

namespace cmdp {

/// Scalarized reward R - penalty_weight * D.
struct PenaltyConfig {
  double penalty_weight = 0.0;

  void validate() const {
    if (!(penalty_weight >= 0.0)) throw Error(ErrorCode::precondition, "penalty_weight must be >= 0");
  }
};

/// Projected stochastic ascent on the multiplier:
/// lambda <- max{0, lambda + step_scale * (1 + episode)^-step_exponent * sum_t D_t}.
struct LagrangeState {
  double multiplier = 0.0;
  double multiplier_step_exponent = 1.0;
  double step_scale = 1.0;
  /// Final-policy ties on R - lambda D within this margin go to the action
  /// with the lower cost estimate.
  double tie_tolerance = 0.05;

  void validate() const {
    if (!(multiplier >= 0.0)) throw Error(ErrorCode::precondition, "multiplier must be >= 0");
    if (!(multiplier_step_exponent > 0.0 && step_scale > 0.0 && tie_tolerance >= 0.0))
      throw Error(ErrorCode::precondition, "invalid multiplier step settings");
  }
};

/// Argmax of a row, smallest action on ties.
template <class Row>
int argmax_slot(const Row& r) {
  int best = 0;
  for (int u = 1; u < static_cast<int>(r.h.size()); ++u)
    if (r.h[u] > r.h[best]) best = u;
  return best;
}

/// Greedy policy on a single (h) table; unseen states take the smallest action.
template <SampledModel M>
class GreedyTablePolicy {
 public:
  using table_type = LazyQPair<typename M::state_type, typename M::action_type>;

  GreedyTablePolicy(const M& model, const table_type& tables) : model_(&model), tables_(&tables) {}

  typename M::action_type operator()(const typename M::state_type& x) const {
    const auto* row = tables_->find(x);
    if (!row) return model_->actions(x).front();
    return row->actions[argmax_slot(*row)];
  }

 private:
  const M* model_;
  const table_type* tables_;
};

namespace detail {

template <class Row>
int explore_or(const Row& r, int greedy, double epsilon, RngStream& rng) {
  if (epsilon > 0.0 && rng.uniform() < epsilon) return static_cast<int>(rng.below(r.actions.size()));
  return greedy;
}

template <class Row>
int lagrangian_slot(const Row& r, double lambda, double tie_tolerance) {
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t u = 0; u < r.h.size(); ++u) best = std::max(best, r.h[u] - lambda * r.q[u]);
  int pick = -1;
  for (int u = 0; u < static_cast<int>(r.h.size()); ++u)
    if (r.h[u] - lambda * r.q[u] >= best - tie_tolerance && (pick < 0 || r.q[u] < r.q[pick])) pick = u;
  return pick;
}

}  // namespace detail

/// Asynchronous Q-learning on R - w D over the full admissible action set,
/// stepped with zeta2. Shares exploration and sampling with the two-phase
/// learner; only the h column is used.
template <SampledModel M>
TrainResult<typename M::state_type, typename M::action_type> train_penalized_q(
    const M& model, const PenaltyConfig& penalty, const LearnerConfig& c, RngStream& rng,
    const TrainHooks<typename M::state_type, typename M::action_type>& hooks = {}) {
  c.validate();
  penalty.validate();
  using State = typename M::state_type;
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  TrainResult<State, typename M::action_type> res;
  const int n = c.schedule.sample_batch;
  bool capped = false;
  for (int episode = 1; episode <= c.max_episodes && !capped; ++episode) {
    State x = model.sample_initial(rng);
    int length = 0;
    while (!model.is_absorbing(x)) {
      auto& row = res.tables.row(model, x);
      const int slot = detail::explore_or(row, argmax_slot(row), c.exploration_epsilon, rng);
      const auto u = row.actions[slot];
      double r_sum = 0.0, d_sum = 0.0, next_sum = 0.0;
      std::optional<State> first;
      for (int m = 0; m < n; ++m) {
        auto tr = model.sample(x, u, rng);
        r_sum += tr.reward;
        d_sum += tr.cost;
        if (!model.is_absorbing(tr.next))
          if (const auto* nr = res.tables.find(tr.next)) next_sum += nr->h[argmax_slot(*nr)];
        if (!first) first = std::move(tr.next);
      }
      double reward = r_sum / n, cost = d_sum / n;
      if constexpr (ExactCostModel<M>) {
        reward = model.reward(x, u);
        cost = model.cost(x, u);
      }
      const double target = reward - penalty.penalty_weight * cost + next_sum / n;
      auto& live = res.tables.row(model, x);
      const double z = step_sizes(live.visits[slot], c.schedule).zeta2;
      live.h[slot] += z * (target - live.h[slot]);
      ++live.visits[slot];
      ++live.state_visits;
      ++res.updates;
      ++length;
      x = std::move(*first);
      if (c.max_updates > 0 && res.updates >= c.max_updates) {
        capped = true;
        break;
      }
    }
    res.episodes = episode;
    res.episode_lengths.push_back(length);
    if (c.eval_every > 0 && episode % c.eval_every == 0) {
      LogRow lr;
      lr.update_count = res.updates;
      lr.episode = episode;
      if (hooks.reference_error) {
        const auto [eq, eh] = hooks.reference_error(res.tables);
        lr.xi_q_error = eq;
        lr.xi_h_error = eh;
      }
      if (hooks.eval_rng && c.eval_trials > 0) {
        const auto mc = mc_evaluate(model, GreedyTablePolicy<M>(model, res.tables), c.eval_trials, *hooks.eval_rng);
        lr.mc_mean_reward = mc.mean_reward;
        lr.mc_mean_constraint = mc.mean_constraint;
      }
      if (hooks.record_wallclock)
        lr.wallclock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
      res.log.rows.push_back(lr);
    }
  }
  return res;
}

/// Unconstrained Q-learning: the penalized learner at weight 0.
template <SampledModel M>
TrainResult<typename M::state_type, typename M::action_type> train_vanilla_q(
    const M& model, const LearnerConfig& c, RngStream& rng,
    const TrainHooks<typename M::state_type, typename M::action_type>& hooks = {}) {
  return train_penalized_q(model, PenaltyConfig{0.0}, c, rng, hooks);
}

struct GridSearchResult {
  PenaltyConfig best;
  std::size_t best_index = 0;
  bool feasible = false;
  std::vector<double> weights;
  std::vector<McResult> evaluations;
};

/// Trains one penalized learner per weight (stream rng.split(i)), evaluates
/// each on `eval_rng`, and keeps the highest mean reward among weights whose
/// mean constraint is within 2 SE of 0; otherwise the least violating weight.
template <SampledModel M>
GridSearchResult grid_search_penalty(const M& model, const std::vector<double>& weights, const LearnerConfig& c,
                                     const RngStream& rng, const RngStream& eval_rng, int eval_trials) {
  if (weights.empty()) throw Error(ErrorCode::precondition, "empty penalty grid");
  GridSearchResult out;
  out.weights = weights;
  int best_feasible = -1, least_violating = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    RngStream train_rng = rng.split(i);
    const PenaltyConfig pc{weights[i]};
    const auto trained = train_penalized_q(model, pc, c, train_rng);
    auto mc = mc_evaluate(model, GreedyTablePolicy<M>(model, trained.tables), eval_trials, eval_rng);
    const int k = static_cast<int>(i);
    if (mc.feasible() && (best_feasible < 0 || mc.mean_reward > out.evaluations[best_feasible].mean_reward))
      best_feasible = k;
    if (least_violating < 0 || mc.mean_constraint < out.evaluations[least_violating].mean_constraint)
      least_violating = k;
    out.evaluations.push_back(std::move(mc));
  }
  out.feasible = best_feasible >= 0;
  out.best_index = static_cast<std::size_t>(out.feasible ? best_feasible : least_violating);
  out.best = PenaltyConfig{weights[out.best_index]};
  return out;
}

/// Greedy policy on R - lambda D from the two Lagrangian tables (h: reward,
/// q: constraint cost).
template <SampledModel M>
class LagrangianPolicy {
 public:
  using table_type = LazyQPair<typename M::state_type, typename M::action_type>;

  LagrangianPolicy(const M& model, const table_type& tables, double lambda, double tie_tolerance)
      : model_(&model), tables_(&tables), lambda_(lambda), tie_(tie_tolerance) {}

  typename M::action_type operator()(const typename M::state_type& x) const {
    const auto* row = tables_->find(x);
    if (!row) return model_->actions(x).front();
    return row->actions[detail::lagrangian_slot(*row, lambda_, tie_)];
  }

  double multiplier() const noexcept { return lambda_; }

 private:
  const M* model_;
  const table_type* tables_;
  double lambda_;
  double tie_;
};

template <class State, class Action>
struct LagrangianResult {
  TrainResult<State, Action> train;
  std::vector<double> multiplier_trace;  // value after every episode
  double multiplier = 0.0;
};

/// Lagrangian baseline. Fast timescale: reward and cost Q-tables of the
/// greedy actor on R - lambda D (h and q columns). Slowest timescale: one
/// projected multiplier step per episode, driven by the realized episode
/// constraint cost.
template <SampledModel M>
LagrangianResult<typename M::state_type, typename M::action_type> train_lagrangian_q(
    const M& model, const LearnerConfig& c, const LagrangeState& lagrange, RngStream& rng,
    const TrainHooks<typename M::state_type, typename M::action_type>& hooks = {}) {
  c.validate();
  lagrange.validate();
  using State = typename M::state_type;
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  LagrangianResult<State, typename M::action_type> out;
  auto& res = out.train;
  res.log.has_lambda = true;
  double lambda = lagrange.multiplier;
  const int n = c.schedule.sample_batch;
  bool capped = false;
  for (int episode = 1; episode <= c.max_episodes && !capped; ++episode) {
    State x = model.sample_initial(rng);
    int length = 0;
    double episode_cost = 0.0;
    while (!model.is_absorbing(x)) {
      auto& row = res.tables.row(model, x);
      const int slot = detail::explore_or(row, detail::lagrangian_slot(row, lambda, 0.0), c.exploration_epsilon, rng);
      const auto u = row.actions[slot];
      double r_sum = 0.0, d_sum = 0.0, h_next = 0.0, q_next = 0.0;
      std::optional<Transition<State>> first;
      for (int m = 0; m < n; ++m) {
        auto tr = model.sample(x, u, rng);
        r_sum += tr.reward;
        d_sum += tr.cost;
        if (!model.is_absorbing(tr.next))
          if (const auto* nr = res.tables.find(tr.next)) {
            const int g = detail::lagrangian_slot(*nr, lambda, 0.0);
            h_next += nr->h[g];
            q_next += nr->q[g];
          }
        if (!first) first = std::move(tr);
      }
      double reward = r_sum / n, cost = d_sum / n;
      if constexpr (ExactCostModel<M>) {
        reward = model.reward(x, u);
        cost = model.cost(x, u);
      }
      auto& live = res.tables.row(model, x);
      const double z = step_sizes(live.visits[slot], c.schedule).zeta2;
      live.h[slot] += z * (reward + h_next / n - live.h[slot]);
      live.q[slot] += z * (cost + q_next / n - live.q[slot]);
      ++live.visits[slot];
      ++live.state_visits;
      ++res.updates;
      ++length;
      episode_cost += first->cost;
      x = std::move(first->next);
      if (c.max_updates > 0 && res.updates >= c.max_updates) {
        capped = true;
        break;
      }
    }
    const double eta =
        lagrange.step_scale * std::pow(1.0 + static_cast<double>(episode), -lagrange.multiplier_step_exponent);
    lambda = std::max(0.0, lambda + eta * episode_cost);
    out.multiplier_trace.push_back(lambda);
    res.episodes = episode;
    res.episode_lengths.push_back(length);
    if (c.eval_every > 0 && episode % c.eval_every == 0) {
      LogRow lr;
      lr.update_count = res.updates;
      lr.episode = episode;
      lr.lambda = lambda;
      if (hooks.reference_error) {
        const auto [eq, eh] = hooks.reference_error(res.tables);
        lr.xi_q_error = eq;
        lr.xi_h_error = eh;
      }
      if (hooks.eval_rng && c.eval_trials > 0) {
        const auto mc = mc_evaluate(model, LagrangianPolicy<M>(model, res.tables, lambda, lagrange.tie_tolerance),
                                    c.eval_trials, *hooks.eval_rng);
        lr.mc_mean_reward = mc.mean_reward;
        lr.mc_mean_constraint = mc.mean_constraint;
      }
      if (hooks.record_wallclock)
        lr.wallclock_seconds = std::chrono::duration<double>(Clock::now() - start).count();
      res.log.rows.push_back(lr);
    }
  }
  out.multiplier = lambda;
  return out;
}

}  // namespace cmdp
