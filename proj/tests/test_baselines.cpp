#include <gtest/gtest.h>

#include <algorithm>

#include "cmdp/baselines.hpp"
#include "fixtures.hpp"

using namespace cmdp;

namespace {

LearnerConfig episodes(int n) {
  LearnerConfig c;
  c.max_episodes = n;
  return c;
}

}  // namespace

TEST(VanillaQ, ToyIgnoresTheConstraint) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  RngStream rng(1);
  const auto res = train_vanilla_q(model, episodes(500), rng);
  EXPECT_EQ(GreedyTablePolicy<ExplicitModel>(model, res.tables)(t.s0), 1);
  EXPECT_EQ(res.tables.h(t.s0, 1), 5.0);
}

TEST(PenalizedQ, LargeWeightPicksTheFeasibleAction) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  RngStream rng(2);
  const auto res = train_penalized_q(model, PenaltyConfig{10.0}, episodes(500), rng);
  EXPECT_EQ(res.tables.h(t.s0, 0), 11.0);
  EXPECT_EQ(res.tables.h(t.s0, 1), -5.0);
  EXPECT_EQ(GreedyTablePolicy<ExplicitModel>(model, res.tables)(t.s0), 0);
}

TEST(PenalizedQ, IndifferenceWeightTiesToTheSmallestAction) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  RngStream rng(3);
  const auto res = train_penalized_q(model, PenaltyConfig{2.0}, episodes(500), rng);
  EXPECT_EQ(res.tables.h(t.s0, 0), 3.0);
  EXPECT_EQ(res.tables.h(t.s0, 1), 3.0);
  EXPECT_EQ(GreedyTablePolicy<ExplicitModel>(model, res.tables)(t.s0), 0);
}

TEST(PenalizedQ, WeightZeroIsVanillaBitForBit) {
  const auto m = fixtures::two_state();
  const ExplicitModel model(m);
  RngStream a(4), b(4);
  const auto pen = train_penalized_q(model, PenaltyConfig{0.0}, episodes(300), a);
  const auto van = train_vanilla_q(model, episodes(300), b);
  EXPECT_TRUE(pen.tables == van.tables);
  EXPECT_EQ(pen.updates, van.updates);
}

TEST(PenalizedQ, NegativeWeightIsRejected) {
  const auto t = fixtures::toy();
  RngStream rng(5);
  EXPECT_THROW(train_penalized_q(ExplicitModel(t.m), PenaltyConfig{-1.0}, episodes(1), rng), Error);
}

TEST(GridSearch, PicksTheBestFeasibleWeight) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  const auto g = grid_search_penalty(model, {0.0, 2.0, 10.0}, episodes(500), RngStream(6), RngStream(7), 100);
  EXPECT_TRUE(g.feasible);
  EXPECT_EQ(g.best_index, 1u);
  EXPECT_EQ(g.best.penalty_weight, 2.0);
  ASSERT_EQ(g.evaluations.size(), 3u);
  EXPECT_EQ(g.evaluations[0].mean_constraint, 1.0);
  EXPECT_EQ(g.evaluations[1].mean_reward, 1.0);
}

TEST(GridSearch, SingleWeight) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  const auto g = grid_search_penalty(model, {10.0}, episodes(200), RngStream(8), RngStream(9), 50);
  EXPECT_TRUE(g.feasible);
  EXPECT_EQ(g.best.penalty_weight, 10.0);
}

TEST(GridSearch, AllInfeasibleFallsBackToLeastViolating) {
  const auto t = fixtures::toy(0.5, 1.0, 1.0, 5.0);
  const ExplicitModel model(t.m);
  const auto g = grid_search_penalty(model, {0.0, 100.0}, episodes(300), RngStream(10), RngStream(11), 50);
  EXPECT_FALSE(g.feasible);
  EXPECT_EQ(g.best_index, 1u);
  EXPECT_EQ(g.evaluations[1].mean_constraint, 0.5);
}

TEST(GridSearch, EmptyGridIsRejected) {
  const auto t = fixtures::toy();
  EXPECT_THROW(grid_search_penalty(ExplicitModel(t.m), {}, episodes(1), RngStream(1), RngStream(2), 1), Error);
}

TEST(Lagrangian, ToySettlesOnTheFeasibleAction) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  RngStream rng(12);
  const auto res = train_lagrangian_q(model, episodes(500), LagrangeState{}, rng);
  ASSERT_EQ(res.multiplier_trace.size(), 500u);
  EXPECT_TRUE(std::all_of(res.multiplier_trace.begin(), res.multiplier_trace.end(), [](double l) { return l >= 0.0; }));
  // Indifference between the actions sits at lambda = 2.
  EXPECT_NEAR(res.multiplier, 2.0, 0.25);
  const LagrangianPolicy<ExplicitModel> p(model, res.train.tables, res.multiplier, LagrangeState{}.tie_tolerance);
  EXPECT_EQ(p(t.s0), 0);
  EXPECT_EQ(res.train.tables.q(t.s0, 0), -1.0);
  EXPECT_EQ(res.train.tables.q(t.s0, 1), 1.0);
}

TEST(Lagrangian, MultiplierStaysAtZeroWithoutCosts) {
  const auto t = fixtures::toy(0.0, 1.0, 0.0, 5.0);
  const ExplicitModel model(t.m);
  RngStream rng(13);
  const auto res = train_lagrangian_q(model, episodes(200), LagrangeState{}, rng);
  EXPECT_TRUE(std::all_of(res.multiplier_trace.begin(), res.multiplier_trace.end(), [](double l) { return l == 0.0; }));
  EXPECT_EQ(LagrangianPolicy<ExplicitModel>(model, res.train.tables, 0.0, 0.0)(t.s0), 1);
}

TEST(Lagrangian, LogCarriesTheMultiplier) {
  const auto t = fixtures::toy();
  const ExplicitModel model(t.m);
  LearnerConfig c = episodes(100);
  c.eval_every = 50;
  RngStream rng(14);
  const auto res = train_lagrangian_q(model, c, LagrangeState{}, rng);
  EXPECT_TRUE(res.train.log.has_lambda);
  ASSERT_EQ(res.train.log.rows.size(), 2u);
  EXPECT_EQ(*res.train.log.rows[1].lambda, res.multiplier);
}

TEST(Lagrangian, InvalidSettingsAreRejected) {
  const auto t = fixtures::toy();
  LagrangeState s;
  s.step_scale = 0.0;
  RngStream rng(15);
  EXPECT_THROW(train_lagrangian_q(ExplicitModel(t.m), episodes(1), s, rng), Error);
}
