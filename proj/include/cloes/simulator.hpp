#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cloes/core.hpp"
#include "cloes/evaluator.hpp"
#include "cloes/objective.hpp"

namespace cloes {

/// Per-stage survivor counts for one query: keep[j] items leave stage j.
using ServePlan = std::vector<std::size_t>;

/// keep_j = min(remaining, ceil(E[Count_{q,j}])), at least one, non-increasing.
ServePlan plan(const CascadeModel& model, const QueryGroup& group);

struct ServeResult {
  std::vector<std::size_t> ranked;    // final survivors, best first
  std::vector<std::size_t> entrants;  // items entering each stage
  double realized_cost = 0.0;
  double latency_units = 0.0;
};

/// Deterministic hard filtering: stage j keeps the top keep[j] current survivors
/// by cumulative pass probability through stage j, ties in input order.
ServeResult serve_query(const CascadeModel& model, const ServePlan& keep, const QueryGroup& group,
                        std::span<const double> costs);

/// Bernoulli filtering: each survivor passes stage j with probability p_j. At
/// least one item (the best by cumulative probability) survives every stage.
ServeResult serve_query_stochastic(const CascadeModel& model, const QueryGroup& group, std::span<const double> costs,
                                   std::uint64_t seed);

struct SimOptions {
  double traffic_multiplier = 1.0;
  bool stochastic = false;
  std::uint64_t seed = 1;
  double cost_units_per_ms = 10.0;
};

struct SimRecord {
  std::string query_id;
  std::int64_t recalled = 0;
  std::size_t sampled = 0;
  std::size_t final_count = 0;
  double realized_cost = 0.0;
  double latency_units = 0.0;
  double latency_ms = 0.0;
  bool below_floor = false;
  bool above_ceiling = false;
};

struct SimReport {
  double traffic_multiplier = 1.0;
  double total_cost = 0.0;
  double utilization = 0.0;  // traffic_multiplier * total_cost
  double mean_final_count = 0.0;
  double mean_latency_units = 0.0;
  double p95_latency_units = 0.0;
  double mean_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double fraction_below_floor = 0.0;
  double fraction_above_latency_ceiling = 0.0;
  std::vector<SimRecord> queries;
};

/// Serves every group in input order. Floors and ceilings compare the served
/// result count and the realized latency against obj_cfg.
SimReport simulate(const CascadeModel& model, std::span<const QueryGroup> data, const FeatureSchema& schema,
                   const ObjectiveConfig& obj_cfg, const SimOptions& options = {});

/// Same accounting for the fixed filter-then-rank pipeline. The filter keeps
/// min(keep_k, N_q) sampled items; the ranker scores them.
SimReport simulate_two_stage(const TwoStageBaseline& baseline, std::span<const QueryGroup> data,
                             const FeatureSchema& schema, const ObjectiveConfig& obj_cfg,
                             const SimOptions& options = {});

/// Recomputes the aggregate fields from report.queries.
void summarize_sim(SimReport& report, double cost_units_per_ms);

void write_sim_summary(std::ostream& out, const SimReport& report);
void write_sim_records(std::ostream& out, std::span<const SimRecord> records);

}  // namespace cloes
