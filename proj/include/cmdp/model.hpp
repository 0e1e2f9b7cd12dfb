#pragma once

#include <concepts>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cmdp/rng.hpp"

namespace cmdp {

/// One realized transition of a sampled model.
template <class State>
struct Transition {
  State next;
  double reward = 0.0;
  double cost = 0.0;
};

/// A model that can be simulated. States are hashable keys; actions are
/// totally ordered so "smallest action" tie-breaks are well defined, and
/// `actions(s)` returns them in ascending order.
///
/// `stage(s)` is the time counter t of the state; it feeds the weighted
/// sup-norm xi(x) = horizon - t used throughout the library.
template <class M>
concept SampledModel = requires(const M& m, const typename M::state_type& s,
                                const typename M::action_type& a, RngStream& rng) {
  typename M::state_type;
  typename M::action_type;
  { m.sample_initial(rng) } -> std::convertible_to<typename M::state_type>;
  { m.is_absorbing(s) } -> std::convertible_to<bool>;
  { m.actions(s) } -> std::convertible_to<std::vector<typename M::action_type>>;
  { m.sample(s, a, rng) } -> std::convertible_to<Transition<typename M::state_type>>;
  { m.horizon() } -> std::convertible_to<int>;
  { m.stage(s) } -> std::convertible_to<int>;
  { std::hash<typename M::state_type>{}(s) } -> std::convertible_to<std::size_t>;
  { a < a } -> std::convertible_to<bool>;
};

/// Models whose immediate reward and constraint cost can be evaluated
/// exactly; learners then use R(x,u) and D(x,u) instead of realized samples.
template <class M>
concept ExactCostModel = SampledModel<M> &&
    requires(const M& m, const typename M::state_type& s, const typename M::action_type& a) {
      { m.reward(s, a) } -> std::convertible_to<double>;
      { m.cost(s, a) } -> std::convertible_to<double>;
    };

/// Models whose transient states can be listed (needed by synchronous sweeps).
template <class M>
concept EnumerableModel = SampledModel<M> && requires(const M& m) {
  { m.transient_states() } -> std::convertible_to<std::vector<typename M::state_type>>;
};

/// Pairwise summation; the result depends only on the order of `values`,
/// which keeps Monte Carlo aggregates reproducible when trials are computed
/// in parallel and stored by index.
inline double pairwise_sum(std::span<const double> values) {
  if (values.size() <= 8) {
    double s = 0.0;
    for (double v : values) s += v;
    return s;
  }
  const std::size_t half = values.size() / 2;
  return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

}  // namespace cmdp
