#include "cloes/objective.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "cloes/cascade.hpp"

namespace cloes {

namespace {

// log(1 - exp(x)) for x <= 0.
double log1mexp(double x) {
  if (x > -std::numbers::ln2) return std::log(-std::expm1(x));
  return std::log1p(-std::exp(x));
}

// log(1 - prod_j sigmoid(z_j)) given log_p = sum_j log_sigmoid(z_j). When the
// product rounds to 1, 1 - p equals sum_j sigmoid(-z_j) to double precision.
double log_reject(double log_p, std::span<const double> logits) {
  if (-log_p >= 1e-300) return log1mexp(log_p);
  double top = -std::numeric_limits<double>::infinity();
  for (double z : logits) top = std::max(top, log_sigmoid(-z));
  double sum = 0.0;
  for (double z : logits) sum += std::exp(log_sigmoid(-z) - top);
  return top + std::log(sum);
}

// (1/gamma) * ln(1 + exp(gamma * u))
double softplus(double u, double gamma) {
  const double s = gamma * u;
  if (s > 0.0) return u + std::log1p(std::exp(-s)) / gamma;
  return std::log1p(std::exp(s)) / gamma;
}

void check_costs(const CascadeModel& model, std::span<const double> costs) {
  if (costs.size() != model.num_stages()) {
    throw DimensionError("got " + std::to_string(costs.size()) + " stage costs for a " +
                         std::to_string(model.num_stages()) + "-stage model");
  }
}

}  // namespace

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::kL1: return "l1";
    case Objective::kL2: return "l2";
    case Objective::kL3: return "l3";
  }
  return "l3";
}

Objective objective_from_string(std::string_view text) {
  if (text == "l1" || text == "L1") return Objective::kL1;
  if (text == "l2" || text == "L2") return Objective::kL2;
  if (text == "l3" || text == "L3") return Objective::kL3;
  throw Error("unknown objective '" + std::string(text) + "' (expected l1, l2 or l3)");
}

void ObjectiveConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw Error(std::string("objective: ") + what);
  };
  require(alpha >= 0.0, "alpha must be >= 0");
  require(beta >= 0.0, "beta must be >= 0");
  require(gamma > 0.0, "gamma must be > 0");
  require(delta >= 0.0, "delta must be >= 0");
  require(latency_penalty_weight >= 0.0, "latency_penalty_weight must be >= 0");
  require(result_floor > 0.0, "result_floor must be > 0");
  require(latency_ceiling > 0.0, "latency_ceiling must be > 0");
  require(purchase_weight >= 1.0, "purchase_weight must be >= 1");
  require(price_weight >= 0.0, "price_weight must be >= 0");
}

double instance_weight(const Instance& instance, const ObjectiveConfig& cfg) {
  if (!(instance.price > 0.0)) throw Error("instance price must be positive");
  if (!cfg.use_importance_weights) return 1.0;
  switch (instance.label) {
    case Behavior::kNone: return 1.0;
    case Behavior::kClick: return cfg.price_weight * std::log(instance.price);
    case Behavior::kPurchase: return cfg.purchase_weight * cfg.price_weight * std::log(instance.price);
  }
  return 1.0;
}

double weighted_nll(const CascadeModel& model, std::span<const QueryGroup> data, const ObjectiveConfig& cfg) {
  double total = 0.0;
  std::vector<double> logits;
  for (const auto& group : data) {
    for (const auto& inst : group.instances) {
      double log_p = 0.0;
      logits.clear();
      for (std::size_t j = 0; j < model.num_stages(); ++j) {
        logits.push_back(stage_logit(model, group.query_features, inst.item_features, j));
        log_p += log_sigmoid(logits.back());
      }
      const double ll = inst.positive() ? log_p : log_reject(log_p, logits);
      total -= instance_weight(inst, cfg) * ll;
    }
  }
  return total;
}

double expected_count(const CascadeModel& model, const QueryGroup& group, std::size_t stages_passed) {
  if (stages_passed > model.num_stages()) {
    throw Error("expected_count: stage " + std::to_string(stages_passed) + " beyond T = " +
                std::to_string(model.num_stages()));
  }
  const auto recalled = static_cast<double>(group.recalled_count);
  if (stages_passed == 0) return recalled;
  if (group.instances.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& inst : group.instances) sum += cascade_probabilities(model, group, inst.item_features).cumulative[stages_passed - 1];
  return recalled / static_cast<double>(group.instances.size()) * sum;
}

double expected_cost(const CascadeModel& model, std::span<const QueryGroup> data, std::span<const double> costs) {
  check_costs(model, costs);
  double total = 0.0;
  for (const auto& group : data) {
    for (const auto& inst : group.instances) {
      const auto probs = cascade_probabilities(model, group, inst.item_features);
      total += costs[0];
      for (std::size_t k = 0; k + 1 < costs.size(); ++k) total += probs.cumulative[k] * costs[k + 1];
    }
  }
  return total;
}

double expected_latency(const CascadeModel& model, const QueryGroup& group, std::span<const double> costs,
                        bool survivor_form) {
  check_costs(model, costs);
  double latency = 0.0;
  for (std::size_t j = 0; j < costs.size(); ++j) {
    latency += costs[j] * expected_count(model, group, survivor_form ? j + 1 : j);
  }
  return latency;
}

double softplus_penalty(double z, double threshold, double gamma) {
  if (!(gamma > 0.0)) throw Error("softplus_penalty: gamma must be > 0");
  return softplus(threshold - z, gamma);
}

LossBreakdown compute_loss(Objective objective, const CascadeModel& model, std::span<const QueryGroup> data,
                           std::span<const double> costs, const ObjectiveConfig& cfg, BatchScale scale) {
  cfg.validate();
  check_costs(model, costs);
  const std::size_t stages = model.num_stages();

  LossBreakdown out;
  out.alpha = cfg.alpha;
  out.beta = objective == Objective::kL1 ? 0.0 : cfg.beta;
  out.delta = objective == Objective::kL3 ? cfg.delta : 0.0;
  out.latency_weight = objective == Objective::kL3 ? cfg.latency_penalty_weight : 0.0;
  out.gradient.assign(model.parameter_count(), 0.0);

  // Cost paid per unit of cumulative pass probability after stage k.
  std::vector<double> cost_coef(stages, 0.0);
  for (std::size_t k = 0; k + 1 < stages; ++k) cost_coef[k] = costs[k + 1];
  std::vector<double> latency_coef = cfg.latency_survivor_form ? std::vector<double>(costs.begin(), costs.end())
                                                               : cost_coef;

  std::vector<double> log_miss;  // log(1 - sigma_j) per instance and stage
  std::vector<double> pass;
  std::vector<double> weight;
  std::vector<double> log_ratio;
  std::vector<double> sums(stages);
  std::vector<double> dz(stages);
  std::vector<double> logits(stages);
  double nll = 0.0;
  double cost = 0.0;

  for (const auto& group : data) {
    const std::size_t n = group.instances.size();
    if (n == 0) continue;
    log_miss.resize(n * stages);
    pass.resize(n * stages);
    weight.resize(n);
    log_ratio.resize(n);
    std::fill(sums.begin(), sums.end(), 0.0);

    for (std::size_t i = 0; i < n; ++i) {
      const auto& inst = group.instances[i];
      double log_p = 0.0;
      double cumulative = 1.0;
      for (std::size_t j = 0; j < stages; ++j) {
        const double z = stage_logit(model, group.query_features, inst.item_features, j);
        logits[j] = z;
        log_p += log_sigmoid(z);
        cumulative *= sigmoid(z);
        log_miss[i * stages + j] = log_sigmoid(-z);
        pass[i * stages + j] = cumulative;
        sums[j] += cumulative;
      }
      const double log_q = log_reject(log_p, logits);
      const double w = instance_weight(inst, cfg);
      nll -= w * (inst.positive() ? log_p : log_q);
      // d nll / d z_j is -w (1 - sigma_j) for a positive and w p (1 - sigma_j) / (1 - p)
      // for a negative; the latter is formed in log space so saturated items stay finite.
      weight[i] = inst.positive() ? -w : w;
      log_ratio[i] = inst.positive() ? 0.0 : log_p - log_q;
      cost += costs[0];
      for (std::size_t k = 0; k + 1 < stages; ++k) cost += cost_coef[k] * pass[i * stages + k];
    }

    const double scale_mn = static_cast<double>(group.recalled_count) / static_cast<double>(n);
    const double count_final = scale_mn * sums[stages - 1];
    double latency = cfg.latency_survivor_form ? 0.0 : static_cast<double>(group.recalled_count) * costs[0];
    for (std::size_t k = 0; k < stages; ++k) latency += scale_mn * latency_coef[k] * sums[k];

    const double mult = scale.group_scale * (cfg.penalty_per_instance ? static_cast<double>(n) : 1.0);
    out.size_penalty += mult * softplus(cfg.result_floor - count_final, cfg.gamma);
    out.latency_penalty += mult * softplus(latency - cfg.latency_ceiling, cfg.gamma);

    const double size_coef = -out.delta * mult * sigmoid(cfg.gamma * (cfg.result_floor - count_final)) * scale_mn;
    const double latency_factor =
        out.latency_weight * mult * sigmoid(cfg.gamma * (latency - cfg.latency_ceiling)) * scale_mn;
    const double cost_factor = out.beta * scale.instance_scale;

    for (std::size_t i = 0; i < n; ++i) {
      const auto& inst = group.instances[i];
      // Suffix sums of d(objective)/d(pass_k) * pass_k over k >= j.
      double suffix = 0.0;
      for (std::size_t jj = stages; jj-- > 0;) {
        double per_pass = cost_factor * cost_coef[jj] + latency_factor * latency_coef[jj];
        if (jj == stages - 1) per_pass += size_coef;
        suffix += per_pass * pass[i * stages + jj];
        const double lm = log_miss[i * stages + jj];
        dz[jj] = scale.instance_scale * weight[i] * std::exp(log_ratio[i] + lm) + std::exp(lm) * suffix;
      }
      for (std::size_t j = 0; j < stages; ++j) {
        const auto& feats = model.assignment().stage(j);
        const std::size_t base = model.stage_offset(j);
        for (std::size_t k = 0; k < feats.size(); ++k) out.gradient[base + k] += dz[j] * inst.item_features[feats[k]];
        const std::size_t qbase = base + feats.size();
        for (std::size_t b = 0; b < model.query_dim(); ++b) {
          const double g = group.query_features[b];
          if (g != 0.0) out.gradient[qbase + b] += dz[j] * g;
        }
      }
    }
  }

  out.nll = scale.instance_scale * nll;
  out.expected_cost = scale.instance_scale * cost;

  const auto params = model.parameters();
  double sq = 0.0;
  for (double w : params) sq += w * w;
  if (cfg.squared_l2) {
    out.l2 = sq;
    for (std::size_t p = 0; p < params.size(); ++p) out.gradient[p] += 2.0 * cfg.alpha * params[p];
  } else {
    out.l2 = std::sqrt(sq);
    if (out.l2 > 0.0) {
      for (std::size_t p = 0; p < params.size(); ++p) out.gradient[p] += cfg.alpha * params[p] / out.l2;
    }
  }

  out.total = out.nll + out.alpha * out.l2 + out.beta * out.expected_cost + out.delta * out.size_penalty +
              out.latency_weight * out.latency_penalty;
  return out;
}

}  // namespace cloes
