#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "cmdp/errors.hpp"
#include "cmdp/evaluation.hpp"
#include "cmdp/explicit_cmdp.hpp"

namespace cmdp {

/// Exhaustive solution of a small CMDP over deterministic stationary
/// policies. Policies are identified by a mixed-radix code over the
/// transient states (digit = action slot).
struct BruteForceResult {
  double feasibility_value = 0.0;  // min over policies of max{0, E[sum D]}
  bool feasible = false;
  std::optional<double> optimal_value;
  std::optional<DeterministicPolicy> optimal_policy;
  std::vector<std::uint64_t> feasible_policies;
  std::uint64_t policy_count = 0;

  std::vector<int> transient;  // digit order
  std::vector<std::vector<int>> action_ids;  // per digit

  DeterministicPolicy decode(std::uint64_t code, std::size_t state_count) const {
    DeterministicPolicy p{std::vector<int>(state_count, -1)};
    for (std::size_t d = 0; d < transient.size(); ++d) {
      const auto radix = static_cast<std::uint64_t>(action_ids[d].size());
      p.action_of[transient[d]] = action_ids[d][code % radix];
      code /= radix;
    }
    return p;
  }

  /// Constrained optimum; throws infeasible-problem when no policy satisfies
  /// the constraint.
  double value() const {
    if (!optimal_value)
      throw Error(ErrorCode::infeasible_problem,
                  "no deterministic policy satisfies the constraint (feasibility value " +
                      format_real(feasibility_value) + ")");
    return *optimal_value;
  }
};

inline BruteForceResult brute_force_solve(const ExplicitCmdp& m, double feas_tol = 1e-9,
                                          std::uint64_t max_policies = 1'000'000) {
  require_valid(m);
  BruteForceResult res;
  res.policy_count = 1;
  for (int x = 0; x < static_cast<int>(m.state_count()); ++x) {
    if (m.is_absorbing(x)) continue;
    res.transient.push_back(x);
    std::vector<int> ids;
    for (const auto& a : m.actions_at(x)) ids.push_back(a.id);
    const auto radix = static_cast<std::uint64_t>(ids.size());
    if (res.policy_count > max_policies / radix)
      throw Error(ErrorCode::too_large, "more than " + std::to_string(max_policies) +
                                            " deterministic policies to enumerate");
    res.policy_count *= radix;
    res.action_ids.push_back(std::move(ids));
  }

  const auto order = m.backward_order();
  std::vector<int> digit_of(m.state_count(), -1);
  for (std::size_t d = 0; d < res.transient.size(); ++d) digit_of[res.transient[d]] = static_cast<int>(d);

  std::vector<int> slot(res.transient.size(), 0);
  std::vector<double> vr(m.state_count(), 0.0), vc(m.state_count(), 0.0);
  const int x0 = m.initial_state;
  double best_violation = std::numeric_limits<double>::infinity();
  double best_reward = -std::numeric_limits<double>::infinity();
  std::uint64_t best_code = 0;

  for (std::uint64_t code = 0; code < res.policy_count; ++code) {
    if (code > 0) {
      // increment the mixed-radix counter
      for (std::size_t d = 0; d < slot.size(); ++d) {
        if (++slot[d] < static_cast<int>(res.action_ids[d].size())) break;
        slot[d] = 0;
      }
    }
    for (int x : order) {
      const auto& a = m.actions_at(x)[slot[digit_of[x]]];
      double r = a.reward, c = a.cost;
      for (const auto& [y, p] : a.next) {
        if (m.is_absorbing(y)) continue;
        r += p * vr[y];
        c += p * vc[y];
      }
      vr[x] = r;
      vc[x] = c;
    }
    const double total_cost = m.is_absorbing(x0) ? 0.0 : vc[x0];
    const double total_reward = m.is_absorbing(x0) ? 0.0 : vr[x0];
    best_violation = std::min(best_violation, std::max(0.0, total_cost));
    if (total_cost <= feas_tol) {
      res.feasible_policies.push_back(code);
      if (total_reward > best_reward) {
        best_reward = total_reward;
        best_code = code;
      }
    }
  }

  res.feasibility_value = best_violation;
  res.feasible = !res.feasible_policies.empty();
  if (res.feasible) {
    res.optimal_value = best_reward;
    res.optimal_policy = res.decode(best_code, m.state_count());
  }
  return res;
}

}  // namespace cmdp
