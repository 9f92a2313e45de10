#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "cloes/core.hpp"
#include "cloes/objective.hpp"

namespace cloes {

/// Raised when the loss or gradient stops being finite during training.
class TrainingError : public Error {
 public:
  using Error::Error;
};

struct TrainConfig {
  Objective objective = Objective::kL3;
  double learning_rate = 0.1;
  double lr_decay = 0.95;
  int epochs = 50;
  int batch_size = 32;  // query groups per step
  std::uint64_t seed = 1;
  double init_scale = 0.01;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double total = 0.0;
  double nll = 0.0;
  double l2 = 0.0;
  double expected_cost = 0.0;
  double size_penalty = 0.0;
  double latency_penalty = 0.0;
  double heldout_auc = std::numeric_limits<double>::quiet_NaN();
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> epochs;
};

struct TrainResult {
  CascadeModel model;
  TrainLog log;
};

/// Weights i.i.d. uniform in [-init_scale, init_scale] from a generator seeded by `seed`.
CascadeModel init_weights(const StageAssignment& assignment, std::size_t feature_dim, std::size_t query_dim,
                          std::uint64_t seed, double init_scale);

/// Mini-batch SGD over whole query groups.
///
/// Each step estimates the full-data objective from the batch (instance terms
/// scaled by N / N_batch, query penalties by G / G_batch) and moves the weights
/// by learning_rate times its gradient divided by N, i.e. the gradient of the
/// per-instance mean objective. `initial`, when given, replaces the random
/// initialization and must match the assignment and schema.
TrainResult train(std::span<const QueryGroup> data, const FeatureSchema& schema, const StageAssignment& assignment,
                  const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                  std::span<const QueryGroup> heldout = {}, const CascadeModel* initial = nullptr);

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::vector<std::size_t> failing;
  bool passed = true;
};

struct GradientCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-5;
  double absolute_floor = 1e-8;
  std::size_t max_coordinates = 0;  // 0 = every coordinate
  std::uint64_t seed = 7;
  /// Test hook: added to every analytic partial before comparison.
  double corrupt_gradient = 0.0;
};

/// Compares analytic partials with central differences. Relative error is
/// |a - n| / max(|a|, |n|, absolute_floor). When max_coordinates is set and
/// smaller than the parameter count, a seeded random subset is checked.
GradientCheckReport gradient_check(const CascadeModel& model, std::span<const QueryGroup> data,
                                   std::span<const double> costs, const ObjectiveConfig& cfg, Objective objective,
                                   const GradientCheckOptions& options = {});

inline constexpr int kModelFormatVersion = 1;

void write_model(std::ostream& out, const CascadeModel& model);
CascadeModel read_model(std::istream& in);
void save_model(const std::string& path, const CascadeModel& model);
CascadeModel load_model(const std::string& path);

}  // namespace cloes
