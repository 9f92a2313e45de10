#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "cloes/core.hpp"

namespace cloes {

enum class Objective { kL1, kL2, kL3 };

std::string_view to_string(Objective objective);
Objective objective_from_string(std::string_view text);

/// Coefficients of the training objective.
///
/// `latency_penalty_weight` scales the latency penalty; `purchase_weight` is the
/// purchase-vs-click importance factor. They are unrelated quantities.
struct ObjectiveConfig {
  double alpha = 1.0;   // L2 regularization
  double beta = 1.0;    // expected-cost trade-off
  double gamma = 10.0;  // softplus sharpness
  double delta = 1.0;   // result-size penalty
  double latency_penalty_weight = 0.05;
  double result_floor = 200.0;     // N_o
  double latency_ceiling = 1300.0;  // T_l in cost units (130 ms at 10 units/ms)
  double purchase_weight = 1.0;
  double price_weight = 1.0;

  /// Off: every instance has weight 1. On: behaviour/price importance weights.
  bool use_importance_weights = false;
  /// Squared Euclidean norm (ridge); false uses the plain norm.
  bool squared_l2 = true;
  /// Charge each query penalty once per sampled instance instead of once per query.
  bool penalty_per_instance = false;
  /// Charge stage j's cost to its survivors instead of its entrants.
  bool latency_survivor_form = false;

  void validate() const;
};

/// Scales applied when the objective is estimated from a mini-batch: data terms
/// over instances are multiplied by `instance_scale`, per-query penalties by
/// `group_scale`. Both are 1 for the full dataset.
struct BatchScale {
  double instance_scale = 1.0;
  double group_scale = 1.0;
};

struct LossBreakdown {
  double total = 0.0;
  double nll = 0.0;
  double l2 = 0.0;  // norm term before multiplying by alpha
  double expected_cost = 0.0;
  double size_penalty = 0.0;
  double latency_penalty = 0.0;

  // Coefficients actually applied (zero for terms the objective excludes).
  double alpha = 0.0;
  double beta = 0.0;
  double delta = 0.0;
  double latency_weight = 0.0;

  std::vector<double> gradient;
};

double instance_weight(const Instance& instance, const ObjectiveConfig& cfg);

/// Negative weighted log-likelihood of the cascade's final probability.
double weighted_nll(const CascadeModel& model, std::span<const QueryGroup> data, const ObjectiveConfig& cfg);

/// Expected number of recalled items that pass the first `stages_passed`
/// stages, scaled from the sample to the recalled set by M_q / N_q.
/// `stages_passed == 0` gives M_q.
double expected_count(const CascadeModel& model, const QueryGroup& group, std::size_t stages_passed);

/// Dataset-level expected cost: every sampled instance that enters stage j pays t_j.
double expected_cost(const CascadeModel& model, std::span<const QueryGroup> data, std::span<const double> costs);

/// Per-query expected latency in cost units.
double expected_latency(const CascadeModel& model, const QueryGroup& group, std::span<const double> costs,
                        bool survivor_form = false);

/// (1/gamma) * ln(1 + exp(gamma * (threshold - z))), overflow-safe.
double softplus_penalty(double z, double threshold, double gamma);

LossBreakdown compute_loss(Objective objective, const CascadeModel& model, std::span<const QueryGroup> data,
                           std::span<const double> costs, const ObjectiveConfig& cfg, BatchScale scale = {});

inline LossBreakdown loss_l1(const CascadeModel& m, std::span<const QueryGroup> d, std::span<const double> c,
                             const ObjectiveConfig& cfg) {
  return compute_loss(Objective::kL1, m, d, c, cfg);
}
inline LossBreakdown loss_l2(const CascadeModel& m, std::span<const QueryGroup> d, std::span<const double> c,
                             const ObjectiveConfig& cfg) {
  return compute_loss(Objective::kL2, m, d, c, cfg);
}
inline LossBreakdown loss_l3(const CascadeModel& m, std::span<const QueryGroup> d, std::span<const double> c,
                             const ObjectiveConfig& cfg) {
  return compute_loss(Objective::kL3, m, d, c, cfg);
}

}  // namespace cloes
