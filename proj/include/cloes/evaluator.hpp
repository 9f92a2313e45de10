#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cloes/core.hpp"
#include "cloes/objective.hpp"
#include "cloes/trainer.hpp"

namespace cloes {

/// AUC needs at least one example of each class.
class DegenerateLabelsError : public Error {
 public:
  using Error::Error;
};

struct ScoredLabel {
  double score = 0.0;
  bool positive = false;
};

/// Probability that a random positive outranks a random negative, ties counted
/// as one half. Sort-and-rank-sum with averaged tie ranks.
double auc(std::span<const ScoredLabel> scores);

struct QueryRecord {
  std::string query_id;
  std::int64_t recalled = 0;
  std::size_t sampled = 0;
  double final_count = 0.0;  // expected, recalled-set scale
  double latency = 0.0;      // expected, cost units
  bool below_floor = false;
  bool above_ceiling = false;
};

struct EvalReport {
  double auc = 0.0;
  double expected_cost = 0.0;
  double baseline_cost = 0.0;
  double expected_cost_ratio = 0.0;
  double mean_final_count = 0.0;
  double fraction_below_floor = 0.0;
  double fraction_above_ceiling = 0.0;
  double mean_latency = 0.0;
  double p95_latency = 0.0;
  double mean_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  std::vector<QueryRecord> queries;
};

/// Cost of evaluating `features` on every sampled instance.
double feature_set_cost(std::span<const QueryGroup> data, const FeatureSchema& schema,
                        std::span<const std::size_t> features);
/// Cost of the single-stage classifier over every schema feature; the unit of
/// expected_cost_ratio.
double all_features_cost(std::span<const QueryGroup> data, const FeatureSchema& schema);

/// Nearest-rank percentile, q in (0, 1]. Returns 0 for an empty input.
double percentile(std::vector<double> values, double q);

/// Fills an EvalReport from the summary statistics below. Click and purchase
/// both count as positive.
EvalReport evaluate(const CascadeModel& model, std::span<const QueryGroup> data, const FeatureSchema& schema,
                    const ObjectiveConfig& obj_cfg, double baseline_cost, double cost_units_per_ms = 10.0);

/// Computes aggregate fields of `report` from its per-query table.
void summarize_queries(EvalReport& report, double cost_units_per_ms);

struct BaselineResult {
  CascadeModel model;
  EvalReport report;
};

/// Logistic regression (a one-stage cascade) over `features`, trained with L1 on
/// `train` and evaluated on `test`.
BaselineResult baseline_single_stage(std::span<const QueryGroup> train, std::span<const QueryGroup> test,
                                     const FeatureSchema& schema, const std::vector<std::size_t>& features,
                                     const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                     double cost_units_per_ms = 10.0);

/// Sampled-scale survivors of the fixed first-stage filter:
/// min(ceil(keep_k * N_q / M_q), N_q), at least 1.
std::size_t two_stage_keep(const QueryGroup& group, std::int64_t keep_k);

/// Indices of the group's items that pass the filter, best first; ties keep input order.
std::vector<std::size_t> two_stage_survivors(const QueryGroup& group, std::size_t filter_feature, std::size_t keep);

struct TwoStageBaseline {
  std::size_t filter_feature = 0;
  std::int64_t keep_k = 1;
  std::vector<std::size_t> rest_features;
  CascadeModel ranker;  // one stage over rest_features
  EvalReport report;
};

/// Filter by one feature keeping a constant number of recalled items, then rank
/// survivors with a logistic regression over every other feature. Non-survivors
/// rank below all survivors, tied among themselves.
TwoStageBaseline baseline_two_stage(std::span<const QueryGroup> train, std::span<const QueryGroup> test,
                                    const FeatureSchema& schema, std::size_t filter_feature, std::int64_t keep_k,
                                    const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                    double cost_units_per_ms = 10.0);

EvalReport evaluate_two_stage(const TwoStageBaseline& baseline, std::span<const QueryGroup> data,
                              const FeatureSchema& schema, const ObjectiveConfig& obj_cfg, double baseline_cost,
                              double cost_units_per_ms = 10.0);

/// Joint noisy-AND cascade trained with L1 only.
BaselineResult baseline_soft_cascade(std::span<const QueryGroup> train, std::span<const QueryGroup> test,
                                     const FeatureSchema& schema, const StageAssignment& assignment,
                                     const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                     double cost_units_per_ms = 10.0);

void write_eval_report(std::ostream& out, const EvalReport& report);
void write_query_records(std::ostream& out, std::span<const QueryRecord> records);

}  // namespace cloes
