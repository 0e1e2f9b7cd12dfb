#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "json.hpp"

#include "cmdp/baselines.hpp"
#include "cmdp/dp.hpp"
#include "cmdp/errors.hpp"
#include "cmdp/evaluation.hpp"
#include "cmdp/explicit_cmdp.hpp"
#include "cmdp/learn.hpp"
#include "cmdp/report.hpp"
#include "cmdp/rideshare.hpp"
#include "cmdp/rng.hpp"
#include "cmdp/scenario.hpp"

namespace cmdp {

inline const std::vector<std::string>& algorithm_tokens() {
  static const std::vector<std::string> tokens{"two-phase-sync", "two-phase-async", "dp",   "vanilla",
                                               "penalized",      "lagrangian",      "greedy"};
  return tokens;
}

/// Training and evaluation knobs shared by every algorithm of a plan.
struct BenchSettings {
  std::optional<LearnerConfig> learner;  // unset: defaults scaled by the threshold d
  std::vector<double> penalty_weights{0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0};
  int grid_trials = 200;
  LagrangeState lagrange;
  double dp_tol = 1e-10;
  double dp_eps_feas = 1e-9;
  int workers = 1;
  bool record_wallclock = false;
};

struct ExperimentPlan {
  std::string scenario_path;
  std::string algorithm = "two-phase-async";
  int trials = 1000;
  std::uint64_t seed = 0;
  int replications = 1;
  std::string out_dir;
  BenchSettings settings;

  void validate() const {
    if (std::find(algorithm_tokens().begin(), algorithm_tokens().end(), algorithm) == algorithm_tokens().end())
      throw Error(ErrorCode::precondition, "unknown algorithm '" + algorithm + "'");
    if (trials < 1) throw Error(ErrorCode::precondition, "trials must be positive");
    if (replications < 1) throw Error(ErrorCode::precondition, "replications must be positive");
  }
};

struct ComparisonRow {
  std::string algorithm;
  double mean_reward = 0.0;
  double se_reward = 0.0;
  double mean_constraint = 0.0;
  double se_constraint = 0.0;
  bool feasible = false;
  std::optional<double> wallclock_seconds;
  std::uint64_t updates = 0;
};

struct RunResult {
  ComparisonRow row;
  std::vector<LearningLog> logs;  // one per replication for learners
  std::optional<TableReport> snapshot;
};

/// A problem source: an explicit CMDP file ("cmdp-explicit" header) or a
/// vehicle-sharing scenario (JSON).
using ProblemSource = std::variant<ExplicitCmdp, Scenario>;

inline ProblemSource parse_source(const std::string& text) {
  if (text.rfind("cmdp-explicit", 0) == 0) {
    std::istringstream in(text);
    return read_explicit(in);
  }
  return parse_scenario(text);
}

inline ProblemSource load_source(const std::string& path) { return parse_source(read_text_file(path)); }

/// Learner defaults: the feasibility tolerance scales with |d| for scenarios.
inline LearnerConfig default_learner(const ProblemSource& src) {
  LearnerConfig c;
  if (const auto* sc = std::get_if<Scenario>(&src)) c.eps_feas_learn = 0.05 * (1.0 + std::abs(sc->d));
  return c;
}

namespace detail {

inline McResult pool(std::vector<McResult> parts) {
  McResult out;
  for (auto& p : parts)
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  finalize_means(out);
  return out;
}

inline void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << content) || !f.flush()) throw Error(ErrorCode::io_error, "cannot write '" + path.string() + "'");
}

struct SeedBlocks {
  RngStream train;
  RngStream eval;
  RngStream checkpoint;
  explicit SeedBlocks(std::uint64_t seed) : train(seed, 1), eval(seed, 2), checkpoint(seed, 3) {}
};

inline double elapsed(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

/// Trains and evaluates a learner or baseline on a sampled model.
template <SampledModel M>
RunResult run_sampled(const M& model, const ExperimentPlan& plan, const LearnerConfig& cfg,
                      const std::function<std::pair<double, double>(
                          const LazyQPair<typename M::state_type, typename M::action_type>&)>& reference) {
  using State = typename M::state_type;
  using Action = typename M::action_type;
  const SeedBlocks seeds(plan.seed);
  const auto& algo = plan.algorithm;
  RunResult out;
  out.row.algorithm = algo;
  std::vector<McResult> parts;
  double wall = 0.0;
  for (int rep = 0; rep < plan.replications; ++rep) {
    RngStream rng = seeds.train.split(static_cast<std::uint64_t>(rep));
    const RngStream eval = seeds.eval.split(static_cast<std::uint64_t>(rep));
    TrainHooks<State, Action> hooks;
    hooks.eval_rng = seeds.checkpoint;
    hooks.record_wallclock = plan.settings.record_wallclock;
    const auto start = std::chrono::steady_clock::now();
    if (algo == "greedy") {
      if constexpr (std::is_same_v<M, RideshareModel>) {
        parts.push_back(mc_evaluate(model, GreedyDispatchPolicy(model), plan.trials, eval, plan.settings.workers));
        continue;
      } else {
        throw Error(ErrorCode::precondition, "greedy needs a vehicle-sharing scenario");
      }
    }
    if (algo == "two-phase-sync" || algo == "two-phase-async") {
      hooks.reference_error = reference;
      TrainResult<State, Action> res;
      if (algo == "two-phase-sync") {
        if constexpr (EnumerableModel<M>) res = train_sync(model, cfg, rng, hooks);
        else throw Error(ErrorCode::not_enumerable, "synchronous sweeps need an enumerable model");
      } else {
        res = train_async(model, cfg, rng, hooks);
      }
      wall += elapsed(start);
      out.row.updates += res.updates;
      parts.push_back(mc_evaluate(model, extract_learned_policy(model, res.tables, cfg), plan.trials, eval,
                                  plan.settings.workers));
      if (rep == 0) out.snapshot = snapshot_report(res.tables, cfg, model.horizon());
      out.logs.push_back(std::move(res.log));
    } else if (algo == "vanilla" || algo == "penalized") {
      PenaltyConfig pc;
      if (algo == "penalized") {
        // The final run reuses the winning weight's training stream.
        const auto grid = grid_search_penalty(model, plan.settings.penalty_weights, cfg, rng,
                                              seeds.checkpoint.split(1), plan.settings.grid_trials);
        pc = grid.best;
        rng = rng.split(grid.best_index);
      }
      auto res = train_penalized_q(model, pc, cfg, rng, hooks);
      wall += elapsed(start);
      out.row.updates += res.updates;
      parts.push_back(
          mc_evaluate(model, GreedyTablePolicy<M>(model, res.tables), plan.trials, eval, plan.settings.workers));
      if (rep == 0) out.snapshot = snapshot_report(res.tables, cfg, model.horizon());
      out.logs.push_back(std::move(res.log));
    } else if (algo == "lagrangian") {
      auto res = train_lagrangian_q(model, cfg, plan.settings.lagrange, rng, hooks);
      wall += elapsed(start);
      out.row.updates += res.train.updates;
      parts.push_back(mc_evaluate(
          model, LagrangianPolicy<M>(model, res.train.tables, res.multiplier, plan.settings.lagrange.tie_tolerance),
          plan.trials, eval, plan.settings.workers));
      if (rep == 0) out.snapshot = snapshot_report(res.train.tables, cfg, model.horizon());
      out.logs.push_back(std::move(res.train.log));
    }
  }
  const auto pooled = pool(std::move(parts));
  out.row.mean_reward = pooled.mean_reward;
  out.row.se_reward = pooled.se_reward;
  out.row.mean_constraint = pooled.mean_constraint;
  out.row.se_constraint = pooled.se_constraint;
  out.row.feasible = pooled.feasible();
  if (plan.settings.record_wallclock) out.row.wallclock_seconds = wall;
  return out;
}

inline RunResult run_dp(const ExplicitCmdp& m, const ExperimentPlan& plan) {
  const auto start = std::chrono::steady_clock::now();
  const auto sol = solve_two_phase(m, plan.settings.dp_tol, plan.settings.dp_eps_feas);
  if (!sol.verdict.feasible)
    throw Error(ErrorCode::infeasible_problem,
                "no policy meets the constraint (minimum violation " + format_real(sol.verdict.violation) + ")");
  const auto values = evaluate_policy_exact(m, *sol.policy);
  RunResult out;
  out.row.algorithm = "dp";
  out.row.mean_reward = values.reward[m.initial_state];
  out.row.mean_constraint = values.cost[m.initial_state];
  out.row.feasible = out.row.mean_constraint <= plan.settings.dp_eps_feas;
  if (plan.settings.record_wallclock) out.row.wallclock_seconds = elapsed(start);
  out.snapshot = make_report(m, sol);
  return out;
}

}  // namespace detail

/// Trains (or solves) the plan's algorithm and evaluates the result. Files
/// are written only when `plan.out_dir` is set: <algo>_row.csv,
/// <algo>_curve.csv (learners with checkpoints), <algo>_policy.txt.
inline RunResult run(const ExperimentPlan& plan, const ProblemSource& src);
inline void write_run_artifacts(const ExperimentPlan& plan, const RunResult& result);

inline RunResult run(const ExperimentPlan& plan, const ProblemSource& src) {
  plan.validate();
  const LearnerConfig cfg = plan.settings.learner ? *plan.settings.learner : default_learner(src);
  RunResult result;
  if (const auto* m = std::get_if<ExplicitCmdp>(&src)) {
    require_valid(*m);
    if (plan.algorithm == "dp") {
      result = detail::run_dp(*m, plan);
    } else {
      std::optional<TwoPhaseSolution> ref;
      const bool two_phase = plan.algorithm.rfind("two-phase", 0) == 0;
      if (two_phase) {
        ref = solve_two_phase(*m, plan.settings.dp_tol, plan.settings.dp_eps_feas);
        if (!ref->opt) ref.reset();
      }
      std::function<std::pair<double, double>(const LazyQPair<int, int>&)> reference;
      if (ref)
        reference = [&m, &ref](const LazyQPair<int, int>& t) { return xi_errors(*m, t, ref->q.q, ref->opt->h); };
      const ExplicitModel model(*m);
      result = detail::run_sampled(model, plan, cfg, reference);
    }
  } else {
    const auto& sc = std::get<Scenario>(src);
    if (plan.algorithm == "dp" || plan.algorithm == "two-phase-sync") {
      const auto exported = export_explicit(sc);
      if (plan.algorithm == "dp") {
        result = detail::run_dp(exported.model, plan);
      } else {
        const ExplicitModel model(exported.model);
        result = detail::run_sampled(model, plan, cfg, {});
      }
    } else {
      const RideshareModel model(sc);
      result = detail::run_sampled(model, plan, cfg, {});
    }
  }
  if (!plan.out_dir.empty()) write_run_artifacts(plan, result);
  return result;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string comparison_header() {
  return "algorithm,mean_reward,se_reward,mean_constraint,se_constraint,feasible,wallclock_seconds,updates\n";
}

inline std::string comparison_line(const ComparisonRow& r) {
  std::string s = r.algorithm + ',' + format_real(r.mean_reward) + ',' + format_real(r.se_reward) + ',' +
                  format_real(r.mean_constraint) + ',' + format_real(r.se_constraint) + ',' +
                  (r.feasible ? "1" : "0") + ',';
  if (r.wallclock_seconds) s += format_real(*r.wallclock_seconds);
  return s + ',' + std::to_string(r.updates) + '\n';
}

/// Writes a learning log as CSV; at least one checkpoint is required.
inline void emit_curves(const LearningLog& log, const std::filesystem::path& path) {
  if (log.rows.empty()) throw Error(ErrorCode::precondition, "learning log is empty");
  std::ostringstream ss;
  write_log_csv(ss, log);
  detail::write_file(path, ss.str());
}

inline void write_run_artifacts(const ExperimentPlan& plan, const RunResult& result) {
  std::error_code ec;
  std::filesystem::create_directories(plan.out_dir, ec);
  if (ec) throw Error(ErrorCode::io_error, "cannot create '" + plan.out_dir + "'");
  const std::filesystem::path dir(plan.out_dir);
  detail::write_file(dir / (plan.algorithm + "_row.csv"), comparison_header() + comparison_line(result.row));
  for (std::size_t r = 0; r < result.logs.size(); ++r) {
    if (result.logs[r].rows.empty()) continue;
    const std::string suffix = r == 0 ? "" : "_r" + std::to_string(r);
    emit_curves(result.logs[r], dir / (plan.algorithm + "_curve" + suffix + ".csv"));
  }
  if (result.snapshot) {
    std::ostringstream ss;
    write_report(ss, *result.snapshot);
    detail::write_file(dir / (plan.algorithm + "_policy.txt"), ss.str());
  }
}

struct ComparisonTable {
  std::vector<ComparisonRow> rows;  // mean reward descending
};

inline std::string format_comparison(const ComparisonTable& t) {
  std::string s = comparison_header();
  std::string feasible;
  for (const auto& r : t.rows) {
    s += comparison_line(r);
    if (r.feasible) feasible += (feasible.empty() ? "" : " ") + r.algorithm;
  }
  return s + "# feasible: " + (feasible.empty() ? "none" : feasible) + '\n';
}

/// Runs every plan on one shared scenario and ranks rows by mean reward.
/// Plans must share the scenario contents and the evaluation setup (seed, trials).
inline ComparisonTable compare(const std::vector<ExperimentPlan>& plans) {
  if (plans.size() < 2) throw Error(ErrorCode::precondition, "compare needs at least two plans");
  const std::string text = read_text_file(plans.front().scenario_path);
  for (const auto& p : plans) {
    if (p.seed != plans.front().seed || p.trials != plans.front().trials ||
        p.replications != plans.front().replications)
      throw Error(ErrorCode::mismatched_scenario, "plans differ in evaluation seeds or trials");
    if (p.scenario_path != plans.front().scenario_path && read_text_file(p.scenario_path) != text)
      throw Error(ErrorCode::mismatched_scenario, "plans use different scenarios");
  }
  const auto src = parse_source(text);
  ComparisonTable t;
  for (const auto& p : plans) t.rows.push_back(run(p, src).row);
  std::stable_sort(t.rows.begin(), t.rows.end(),
                   [](const ComparisonRow& a, const ComparisonRow& b) { return a.mean_reward > b.mean_reward; });
  if (!plans.front().out_dir.empty())
    detail::write_file(std::filesystem::path(plans.front().out_dir) / "comparison.csv", format_comparison(t));
  return t;
}

// ---------------------------------------------------------------------------
// Settings files
// ---------------------------------------------------------------------------

/// JSON settings: { "learner": {...}, "penalty_weights": [...], "grid_trials": n,
/// "lagrange": {...}, "dp_tol": r, "dp_eps_feas": r, "workers": n,
/// "record_wallclock": b, "replications": n }. Unknown keys are rejected.
inline BenchSettings parse_settings(const std::string& text, const ProblemSource& src, int* replications = nullptr) {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::parse_error, std::string("invalid JSON: ") + e.what());
  }
  const std::string top = "config";
  detail::only_keys(j, {"learner", "penalty_weights", "grid_trials", "lagrange", "dp_tol", "dp_eps_feas", "workers",
                        "record_wallclock", "replications"},
                    top);
  BenchSettings s;
  if (j.contains("learner")) {
    const auto& l = j.at("learner");
    const std::string w = "config.learner";
    detail::only_keys(l, {"eps_feas_learn", "shrink_tolerance", "max_episodes", "max_updates", "eval_every",
                          "eval_trials", "exploration_epsilon", "exponent_fast", "exponent_slow", "sample_batch"},
                      w);
    LearnerConfig c = default_learner(src);
    c.eps_feas_learn = detail::optional_value(l, "eps_feas_learn", c.eps_feas_learn, w);
    c.shrink_tolerance = detail::optional_value(l, "shrink_tolerance", c.shrink_tolerance, w);
    c.max_episodes = detail::optional_value(l, "max_episodes", c.max_episodes, w);
    c.max_updates = detail::optional_value(l, "max_updates", c.max_updates, w);
    c.eval_every = detail::optional_value(l, "eval_every", c.eval_every, w);
    c.eval_trials = detail::optional_value(l, "eval_trials", c.eval_trials, w);
    c.exploration_epsilon = detail::optional_value(l, "exploration_epsilon", c.exploration_epsilon, w);
    c.schedule.exponent_fast = detail::optional_value(l, "exponent_fast", c.schedule.exponent_fast, w);
    c.schedule.exponent_slow = detail::optional_value(l, "exponent_slow", c.schedule.exponent_slow, w);
    c.schedule.sample_batch = detail::optional_value(l, "sample_batch", c.schedule.sample_batch, w);
    try {
      c.validate();
    } catch (const Error& e) {
      throw Error(ErrorCode::parse_error, e.what());
    }
    s.learner = c;
  }
  s.penalty_weights = detail::optional_value(j, "penalty_weights", s.penalty_weights, top);
  s.grid_trials = detail::optional_value(j, "grid_trials", s.grid_trials, top);
  if (j.contains("lagrange")) {
    const auto& l = j.at("lagrange");
    const std::string w = "config.lagrange";
    detail::only_keys(l, {"multiplier", "multiplier_step_exponent", "step_scale", "tie_tolerance"}, w);
    s.lagrange.multiplier = detail::optional_value(l, "multiplier", s.lagrange.multiplier, w);
    s.lagrange.multiplier_step_exponent =
        detail::optional_value(l, "multiplier_step_exponent", s.lagrange.multiplier_step_exponent, w);
    s.lagrange.step_scale = detail::optional_value(l, "step_scale", s.lagrange.step_scale, w);
    s.lagrange.tie_tolerance = detail::optional_value(l, "tie_tolerance", s.lagrange.tie_tolerance, w);
  }
  s.dp_tol = detail::optional_value(j, "dp_tol", s.dp_tol, top);
  s.dp_eps_feas = detail::optional_value(j, "dp_eps_feas", s.dp_eps_feas, top);
  s.workers = detail::optional_value(j, "workers", s.workers, top);
  s.record_wallclock = detail::optional_value(j, "record_wallclock", s.record_wallclock, top);
  const int reps = detail::optional_value(j, "replications", 1, top);
  if (replications) *replications = reps;
  if (s.penalty_weights.empty() || s.grid_trials < 1 || s.workers < 1 || reps < 1)
    throw Error(ErrorCode::parse_error, "config values out of range");
  return s;
}

}  // namespace cmdp
