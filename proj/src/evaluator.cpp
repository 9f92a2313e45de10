#include "cloes/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "json.hpp"

#include "cloes/cascade.hpp"
#include "cloes/parallel.hpp"

namespace cloes {

double auc(std::span<const ScoredLabel> scores) {
  std::size_t positives = 0;
  for (const auto& s : scores) positives += s.positive ? 1 : 0;
  const std::size_t negatives = scores.size() - positives;
  if (positives == 0) throw DegenerateLabelsError("auc: no positive examples");
  if (negatives == 0) throw DegenerateLabelsError("auc: no negative examples");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a].score < scores[b].score; });

  // Sum of 1-based ranks of positives, tied groups sharing their mean rank.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]].score == scores[order[i]].score) ++j;
    const double mean_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (scores[order[k]].positive) rank_sum += mean_rank;
    }
    i = j + 1;
  }
  const auto p = static_cast<double>(positives);
  const auto n = static_cast<double>(negatives);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * n);
}

double feature_set_cost(std::span<const QueryGroup> data, const FeatureSchema& schema,
                        std::span<const std::size_t> features) {
  double per_item = 0.0;
  for (auto k : features) per_item += schema.feature(k).cost;
  return static_cast<double>(count_instances(data)) * per_item;
}

double all_features_cost(std::span<const QueryGroup> data, const FeatureSchema& schema) {
  std::vector<std::size_t> all(schema.feature_dim());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return feature_set_cost(data, schema, all);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  return values[rank - 1];
}

void summarize_queries(EvalReport& report, double cost_units_per_ms) {
  const auto& q = report.queries;
  if (q.empty()) return;
  double count_sum = 0.0, latency_sum = 0.0;
  std::size_t below = 0, above = 0;
  std::vector<double> latencies;
  latencies.reserve(q.size());
  for (const auto& r : q) {
    count_sum += r.final_count;
    latency_sum += r.latency;
    below += r.below_floor ? 1 : 0;
    above += r.above_ceiling ? 1 : 0;
    latencies.push_back(r.latency);
  }
  const auto n = static_cast<double>(q.size());
  report.mean_final_count = count_sum / n;
  report.fraction_below_floor = static_cast<double>(below) / n;
  report.fraction_above_ceiling = static_cast<double>(above) / n;
  report.mean_latency = latency_sum / n;
  report.p95_latency = percentile(std::move(latencies), 0.95);
  report.mean_latency_ms = report.mean_latency / cost_units_per_ms;
  report.p95_latency_ms = report.p95_latency / cost_units_per_ms;
}

EvalReport evaluate(const CascadeModel& model, std::span<const QueryGroup> data, const FeatureSchema& schema,
                    const ObjectiveConfig& obj_cfg, double baseline_cost, double cost_units_per_ms) {
  if (!(baseline_cost > 0.0)) throw Error("evaluate: baseline cost must be > 0");
  const auto costs = stage_costs(model.assignment(), schema);
  const std::size_t stages = model.num_stages();

  struct GroupResult {
    std::vector<ScoredLabel> scores;
    std::vector<double> sums;  // expected sampled survivors per stage
    QueryRecord record;
  };
  std::vector<GroupResult> results(data.size());
  parallel_for(data.size(), [&](std::size_t g) {
    const auto& group = data[g];
    auto& res = results[g];
    const auto probs = score_group(model, group);
    auto& sums = res.sums;
    sums.assign(stages, 0.0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
      res.scores.push_back({probs[i].final, group.instances[i].positive()});
      for (std::size_t k = 0; k < stages; ++k) sums[k] += probs[i].cumulative[k];
    }
    const auto recalled = static_cast<double>(group.recalled_count);
    const double scale = probs.empty() ? 0.0 : recalled / static_cast<double>(probs.size());
    // Entrants of stage j+1 are the survivors of stage j; stage 1 sees all M_q.
    double latency = 0.0;
    for (std::size_t j = 0; j < stages; ++j) {
      if (obj_cfg.latency_survivor_form) {
        latency += costs[j] * scale * sums[j];
      } else {
        latency += costs[j] * (j == 0 ? recalled : scale * sums[j - 1]);
      }
    }
    auto& rec = res.record;
    rec.query_id = group.query_id;
    rec.recalled = group.recalled_count;
    rec.sampled = group.instances.size();
    rec.final_count = scale * sums[stages - 1];
    rec.latency = latency;
    rec.below_floor = rec.final_count < obj_cfg.result_floor;
    rec.above_ceiling = rec.latency > obj_cfg.latency_ceiling;
  });

  EvalReport report;
  std::vector<ScoredLabel> scores;
  std::vector<double> survivors(stages, 0.0);
  for (auto& res : results) {
    scores.insert(scores.end(), res.scores.begin(), res.scores.end());
    for (std::size_t k = 0; k < stages; ++k) survivors[k] += res.sums[k];
    report.queries.push_back(std::move(res.record));
  }
  // Same grouping as feature_set_cost so a single all-feature stage gives ratio 1 exactly.
  report.expected_cost = static_cast<double>(scores.size()) * costs[0];
  for (std::size_t k = 0; k + 1 < stages; ++k) report.expected_cost += survivors[k] * costs[k + 1];
  report.auc = auc(scores);
  report.baseline_cost = baseline_cost;
  report.expected_cost_ratio = report.expected_cost / baseline_cost;
  summarize_queries(report, cost_units_per_ms);
  return report;
}

BaselineResult baseline_single_stage(std::span<const QueryGroup> train_data, std::span<const QueryGroup> test,
                                     const FeatureSchema& schema, const std::vector<std::size_t>& features,
                                     const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                     double cost_units_per_ms) {
  if (features.empty()) throw Error("baseline_single_stage: feature subset is empty");
  StageAssignment assignment({features});
  TrainConfig cfg = train_cfg;
  cfg.objective = Objective::kL1;
  auto trained = train(train_data, schema, assignment, obj_cfg, cfg);
  auto report = evaluate(trained.model, test, schema, obj_cfg, all_features_cost(test, schema), cost_units_per_ms);
  return {std::move(trained.model), std::move(report)};
}

std::size_t two_stage_keep(const QueryGroup& group, std::int64_t keep_k) {
  if (keep_k < 1) throw Error("two-stage keep count must be >= 1");
  const auto n = group.instances.size();
  if (n == 0) return 0;
  const double scaled = static_cast<double>(keep_k) * static_cast<double>(n) / static_cast<double>(group.recalled_count);
  const auto keep = static_cast<std::size_t>(std::ceil(scaled));
  return std::clamp<std::size_t>(keep, 1, n);
}

std::vector<std::size_t> two_stage_survivors(const QueryGroup& group, std::size_t filter_feature, std::size_t keep) {
  std::vector<std::size_t> order(group.instances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return group.instances[a].item_features[filter_feature] > group.instances[b].item_features[filter_feature];
  });
  order.resize(std::min(keep, order.size()));
  return order;
}

namespace {

std::vector<QueryGroup> filter_survivors(std::span<const QueryGroup> data, std::size_t filter_feature,
                                         std::int64_t keep_k) {
  std::vector<QueryGroup> out;
  out.reserve(data.size());
  for (const auto& group : data) {
    auto& g = out.emplace_back();
    g.query_id = group.query_id;
    g.query_features = group.query_features;
    g.recalled_count = group.recalled_count;
    for (auto i : two_stage_survivors(group, filter_feature, two_stage_keep(group, keep_k))) {
      g.instances.push_back(group.instances[i]);
    }
  }
  return out;
}

}  // namespace

TwoStageBaseline baseline_two_stage(std::span<const QueryGroup> train_data, std::span<const QueryGroup> test,
                                    const FeatureSchema& schema, std::size_t filter_feature, std::int64_t keep_k,
                                    const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                    double cost_units_per_ms) {
  if (filter_feature >= schema.feature_dim()) {
    throw Error("baseline_two_stage: filter feature index " + std::to_string(filter_feature) + " not in schema");
  }
  if (keep_k < 1) throw Error("baseline_two_stage: keep_k must be >= 1");
  std::vector<std::size_t> rest;
  for (std::size_t k = 0; k < schema.feature_dim(); ++k) {
    if (k != filter_feature) rest.push_back(k);
  }
  if (rest.empty()) throw Error("baseline_two_stage: no features left for the second stage");

  const auto survivors = filter_survivors(train_data, filter_feature, keep_k);
  TrainConfig cfg = train_cfg;
  cfg.objective = Objective::kL1;
  auto trained = train(survivors, schema, StageAssignment({rest}), obj_cfg, cfg);

  TwoStageBaseline out{filter_feature, keep_k, rest, std::move(trained.model), {}};
  out.report = evaluate_two_stage(out, test, schema, obj_cfg, all_features_cost(test, schema), cost_units_per_ms);
  return out;
}

EvalReport evaluate_two_stage(const TwoStageBaseline& baseline, std::span<const QueryGroup> data,
                              const FeatureSchema& schema, const ObjectiveConfig& obj_cfg, double baseline_cost,
                              double cost_units_per_ms) {
  if (!(baseline_cost > 0.0)) throw Error("evaluate_two_stage: baseline cost must be > 0");
  const double filter_cost = schema.feature(baseline.filter_feature).cost;
  double rest_cost = 0.0;
  for (auto k : baseline.rest_features) rest_cost += schema.feature(k).cost;

  EvalReport report;
  std::vector<ScoredLabel> scores;
  for (const auto& group : data) {
    const auto keep = two_stage_keep(group, baseline.keep_k);
    std::vector<double> group_scores(group.instances.size(), -1.0);
    for (auto i : two_stage_survivors(group, baseline.filter_feature, keep)) {
      group_scores[i] = cascade_probabilities(baseline.ranker, group, group.instances[i].item_features).final;
    }
    for (std::size_t i = 0; i < group.instances.size(); ++i) {
      scores.push_back({group_scores[i], group.instances[i].positive()});
    }
    report.expected_cost += static_cast<double>(group.instances.size()) * filter_cost +
                            static_cast<double>(keep) * rest_cost;

    QueryRecord rec;
    rec.query_id = group.query_id;
    rec.recalled = group.recalled_count;
    rec.sampled = group.instances.size();
    rec.final_count = static_cast<double>(std::min(baseline.keep_k, group.recalled_count));
    rec.latency = static_cast<double>(group.recalled_count) * filter_cost + rec.final_count * rest_cost;
    rec.below_floor = rec.final_count < obj_cfg.result_floor;
    rec.above_ceiling = rec.latency > obj_cfg.latency_ceiling;
    report.queries.push_back(std::move(rec));
  }
  report.auc = auc(scores);
  report.baseline_cost = baseline_cost;
  report.expected_cost_ratio = report.expected_cost / baseline_cost;
  summarize_queries(report, cost_units_per_ms);
  return report;
}

BaselineResult baseline_soft_cascade(std::span<const QueryGroup> train_data, std::span<const QueryGroup> test,
                                     const FeatureSchema& schema, const StageAssignment& assignment,
                                     const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                                     double cost_units_per_ms) {
  assignment.validate(schema);
  TrainConfig cfg = train_cfg;
  cfg.objective = Objective::kL1;
  auto trained = train(train_data, schema, assignment, obj_cfg, cfg);
  auto report = evaluate(trained.model, test, schema, obj_cfg, all_features_cost(test, schema), cost_units_per_ms);
  return {std::move(trained.model), std::move(report)};
}

void write_eval_report(std::ostream& out, const EvalReport& r) {
  auto line = [&out](const char* key, double v) {
    nlohmann::json j = v;
    out << key << " = " << j.dump() << '\n';
  };
  line("auc", r.auc);
  line("expected_cost", r.expected_cost);
  line("baseline_cost", r.baseline_cost);
  line("expected_cost_ratio", r.expected_cost_ratio);
  line("mean_final_count", r.mean_final_count);
  line("fraction_below_floor", r.fraction_below_floor);
  line("fraction_above_latency_ceiling", r.fraction_above_ceiling);
  line("mean_latency_units", r.mean_latency);
  line("p95_latency_units", r.p95_latency);
  line("mean_latency_ms", r.mean_latency_ms);
  line("p95_latency_ms", r.p95_latency_ms);
  out << "queries = " << r.queries.size() << '\n';
}

void write_query_records(std::ostream& out, std::span<const QueryRecord> records) {
  for (const auto& r : records) {
    nlohmann::json j = {{"qid", r.query_id},
                        {"mcount", r.recalled},
                        {"sampled", r.sampled},
                        {"final_count", r.final_count},
                        {"latency_units", r.latency},
                        {"below_floor", r.below_floor},
                        {"above_latency_ceiling", r.above_ceiling}};
    out << j.dump() << '\n';
  }
}

}  // namespace cloes
