#include "cloes/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "json.hpp"

#include "cloes/cascade.hpp"
#include "cloes/parallel.hpp"

namespace cloes {

namespace {

// Top `keep` of `items` by score, stable in input order.
void keep_top(std::vector<std::size_t>& items, const std::vector<double>& score, std::size_t keep) {
  std::stable_sort(items.begin(), items.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  if (items.size() > keep) items.resize(keep);
  std::sort(items.begin(), items.end());
}

void rank_final(ServeResult& out, const std::vector<StageProbs>& probs) {
  std::stable_sort(out.ranked.begin(), out.ranked.end(),
                   [&](std::size_t a, std::size_t b) { return probs[a].final > probs[b].final; });
}

std::uint64_t query_seed(std::uint64_t seed, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::uint64_t out = 0;
  std::array<std::uint32_t, 2> words{};
  seq.generate(words.begin(), words.end());
  out = (static_cast<std::uint64_t>(words[0]) << 32) | words[1];
  return out;
}

SimRecord make_record(const QueryGroup& group, const ServeResult& served, const ObjectiveConfig& obj_cfg,
                      double cost_units_per_ms) {
  SimRecord rec;
  rec.query_id = group.query_id;
  rec.recalled = group.recalled_count;
  rec.sampled = group.instances.size();
  rec.final_count = served.ranked.size();
  rec.realized_cost = served.realized_cost;
  rec.latency_units = served.latency_units;
  rec.latency_ms = served.latency_units / cost_units_per_ms;
  rec.below_floor = static_cast<double>(rec.final_count) < obj_cfg.result_floor;
  rec.above_ceiling = rec.latency_units > obj_cfg.latency_ceiling;
  return rec;
}

void check_options(const SimOptions& options) {
  if (!(options.traffic_multiplier > 0.0)) throw Error("simulate: traffic multiplier must be > 0");
  if (!(options.cost_units_per_ms > 0.0)) throw Error("simulate: cost_units_per_ms must be > 0");
}

}  // namespace

ServePlan plan(const CascadeModel& model, const QueryGroup& group) {
  const std::size_t stages = model.num_stages();
  ServePlan keep(stages, 0);
  if (group.instances.empty()) return keep;
  const auto probs = score_group(model, group);
  const auto scale = static_cast<double>(group.recalled_count) / static_cast<double>(group.instances.size());
  std::size_t remaining = group.instances.size();
  for (std::size_t j = 0; j < stages; ++j) {
    double sum = 0.0;
    for (const auto& p : probs) sum += p.cumulative[j];
    const double expected = scale * sum;
    const auto ceiling = static_cast<std::size_t>(std::max(1.0, std::ceil(expected)));
    remaining = std::min(remaining, ceiling);
    keep[j] = remaining;
  }
  return keep;
}

ServeResult serve_query(const CascadeModel& model, const ServePlan& keep, const QueryGroup& group,
                        std::span<const double> costs) {
  const std::size_t stages = model.num_stages();
  if (keep.size() != stages) throw DimensionError("serve plan has the wrong number of stages");
  if (costs.size() != stages) throw DimensionError("stage cost count does not match the model");
  ServeResult out;
  const auto probs = score_group(model, group);
  std::vector<std::size_t> alive(group.instances.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<double> score(alive.size());
  for (std::size_t j = 0; j < stages; ++j) {
    out.entrants.push_back(alive.size());
    out.realized_cost += static_cast<double>(alive.size()) * costs[j];
    for (auto i : alive) score[i] = probs[i].cumulative[j];
    keep_top(alive, score, std::max<std::size_t>(keep[j], alive.empty() ? 0 : 1));
  }
  out.latency_units = out.realized_cost;
  out.ranked = std::move(alive);
  rank_final(out, probs);
  return out;
}

ServeResult serve_query_stochastic(const CascadeModel& model, const QueryGroup& group, std::span<const double> costs,
                                   std::uint64_t seed) {
  const std::size_t stages = model.num_stages();
  if (costs.size() != stages) throw DimensionError("stage cost count does not match the model");
  ServeResult out;
  const auto probs = score_group(model, group);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<std::size_t> alive(group.instances.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  for (std::size_t j = 0; j < stages; ++j) {
    out.entrants.push_back(alive.size());
    out.realized_cost += static_cast<double>(alive.size()) * costs[j];
    if (alive.empty()) continue;
    std::vector<std::size_t> next;
    std::size_t best = alive.front();
    for (auto i : alive) {
      if (probs[i].cumulative[j] > probs[best].cumulative[j]) best = i;
      if (unit(rng) < probs[i].per_stage[j]) next.push_back(i);
    }
    if (next.empty()) next.push_back(best);
    alive = std::move(next);
  }
  out.latency_units = out.realized_cost;
  out.ranked = std::move(alive);
  rank_final(out, probs);
  return out;
}

void summarize_sim(SimReport& report, double cost_units_per_ms) {
  report.total_cost = 0.0;
  report.mean_final_count = 0.0;
  report.mean_latency_units = 0.0;
  report.p95_latency_units = 0.0;
  report.fraction_below_floor = 0.0;
  report.fraction_above_latency_ceiling = 0.0;
  std::vector<double> latencies;
  for (const auto& r : report.queries) {
    report.total_cost += r.realized_cost;
    report.mean_final_count += static_cast<double>(r.final_count);
    report.mean_latency_units += r.latency_units;
    report.fraction_below_floor += r.below_floor ? 1.0 : 0.0;
    report.fraction_above_latency_ceiling += r.above_ceiling ? 1.0 : 0.0;
    latencies.push_back(r.latency_units);
  }
  if (!report.queries.empty()) {
    const auto n = static_cast<double>(report.queries.size());
    report.mean_final_count /= n;
    report.mean_latency_units /= n;
    report.fraction_below_floor /= n;
    report.fraction_above_latency_ceiling /= n;
    report.p95_latency_units = percentile(std::move(latencies), 0.95);
  }
  report.utilization = report.traffic_multiplier * report.total_cost;
  report.mean_latency_ms = report.mean_latency_units / cost_units_per_ms;
  report.p95_latency_ms = report.p95_latency_units / cost_units_per_ms;
}

SimReport simulate(const CascadeModel& model, std::span<const QueryGroup> data, const FeatureSchema& schema,
                   const ObjectiveConfig& obj_cfg, const SimOptions& options) {
  check_options(options);
  const auto costs = stage_costs(model.assignment(), schema);
  SimReport report;
  report.traffic_multiplier = options.traffic_multiplier;
  report.queries.resize(data.size());
  parallel_for(data.size(), [&](std::size_t g) {
    const auto& group = data[g];
    const auto served = options.stochastic
                            ? serve_query_stochastic(model, group, costs, query_seed(options.seed, g))
                            : serve_query(model, plan(model, group), group, costs);
    report.queries[g] = make_record(group, served, obj_cfg, options.cost_units_per_ms);
  });
  summarize_sim(report, options.cost_units_per_ms);
  return report;
}

SimReport simulate_two_stage(const TwoStageBaseline& baseline, std::span<const QueryGroup> data,
                             const FeatureSchema& schema, const ObjectiveConfig& obj_cfg, const SimOptions& options) {
  check_options(options);
  const double filter_cost = schema.feature(baseline.filter_feature).cost;
  double rest_cost = 0.0;
  for (auto k : baseline.rest_features) rest_cost += schema.feature(k).cost;
  if (baseline.keep_k < 1) throw Error("simulate_two_stage: keep_k must be >= 1");

  SimReport report;
  report.traffic_multiplier = options.traffic_multiplier;
  report.queries.resize(data.size());
  parallel_for(data.size(), [&](std::size_t g) {
    const auto& group = data[g];
    const auto keep = std::min(static_cast<std::size_t>(baseline.keep_k), group.instances.size());
    ServeResult out;
    out.ranked = two_stage_survivors(group, baseline.filter_feature, keep);
    out.entrants = {group.instances.size(), out.ranked.size()};
    out.realized_cost = static_cast<double>(group.instances.size()) * filter_cost +
                        static_cast<double>(out.ranked.size()) * rest_cost;
    out.latency_units = out.realized_cost;
    std::vector<double> score(group.instances.size(), 0.0);
    for (auto i : out.ranked) {
      score[i] = cascade_probabilities(baseline.ranker, group, group.instances[i].item_features).final;
    }
    std::stable_sort(out.ranked.begin(), out.ranked.end(), [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
    report.queries[g] = make_record(group, out, obj_cfg, options.cost_units_per_ms);
  });
  summarize_sim(report, options.cost_units_per_ms);
  return report;
}

void write_sim_summary(std::ostream& out, const SimReport& r) {
  auto line = [&out](const char* key, double v) { out << key << " = " << nlohmann::json(v).dump() << '\n'; };
  line("traffic_multiplier", r.traffic_multiplier);
  line("total_cost", r.total_cost);
  line("utilization", r.utilization);
  line("mean_final_count", r.mean_final_count);
  line("mean_latency_units", r.mean_latency_units);
  line("p95_latency_units", r.p95_latency_units);
  line("mean_latency_ms", r.mean_latency_ms);
  line("p95_latency_ms", r.p95_latency_ms);
  line("fraction_below_floor", r.fraction_below_floor);
  line("fraction_above_latency_ceiling", r.fraction_above_latency_ceiling);
  out << "queries = " << r.queries.size() << '\n';
}

void write_sim_records(std::ostream& out, std::span<const SimRecord> records) {
  for (const auto& r : records) {
    nlohmann::json j = {{"qid", r.query_id},
                        {"mcount", r.recalled},
                        {"sampled", r.sampled},
                        {"final_count", r.final_count},
                        {"realized_cost", r.realized_cost},
                        {"latency_units", r.latency_units},
                        {"latency_ms", r.latency_ms},
                        {"below_floor", r.below_floor},
                        {"above_latency_ceiling", r.above_ceiling}};
    out << j.dump() << '\n';
  }
}

}  // namespace cloes
