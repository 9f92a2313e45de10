#include "cloes/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "cloes/cascade.hpp"
#include "cloes/evaluator.hpp"

namespace cloes {

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

bool all_finite(const LossBreakdown& loss) {
  if (!std::isfinite(loss.total)) return false;
  return std::all_of(loss.gradient.begin(), loss.gradient.end(), [](double g) { return std::isfinite(g); });
}

std::vector<ScoredLabel> final_scores(const CascadeModel& model, std::span<const QueryGroup> data) {
  std::vector<ScoredLabel> scores;
  for (const auto& group : data) {
    for (const auto& inst : group.instances) {
      scores.push_back({cascade_probabilities(model, group, inst.item_features).final, inst.positive()});
    }
  }
  return scores;
}

bool has_both_classes(std::span<const QueryGroup> data) {
  bool pos = false;
  bool neg = false;
  for (const auto& g : data) {
    for (const auto& inst : g.instances) (inst.positive() ? pos : neg) = true;
  }
  return pos && neg;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error("train: learning_rate must be > 0");
  if (!(lr_decay >= 0.0)) throw Error("train: lr_decay must be >= 0");
  if (epochs < 1) throw Error("train: epochs must be >= 1");
  if (batch_size < 1) throw Error("train: batch_size must be >= 1");
  if (!(init_scale >= 0.0)) throw Error("train: init_scale must be >= 0");
}

CascadeModel init_weights(const StageAssignment& assignment, std::size_t feature_dim, std::size_t query_dim,
                          std::uint64_t seed, double init_scale) {
  if (!(init_scale >= 0.0)) throw Error("init_scale must be >= 0");
  CascadeModel model(assignment, feature_dim, query_dim);
  if (init_scale == 0.0) return model;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-init_scale, init_scale);
  for (double& w : model.parameters()) w = dist(rng);
  return model;
}

TrainResult train(std::span<const QueryGroup> data, const FeatureSchema& schema, const StageAssignment& assignment,
                  const ObjectiveConfig& obj_cfg, const TrainConfig& train_cfg,
                  std::span<const QueryGroup> heldout, const CascadeModel* initial) {
  obj_cfg.validate();
  train_cfg.validate();
  assignment.validate(schema);
  if (!has_both_classes(data)) throw Error("train: data needs at least one positive and one negative instance");

  const auto costs = stage_costs(assignment, schema);
  CascadeModel model =
      initial != nullptr
          ? *initial
          : init_weights(assignment, schema.feature_dim(), schema.query_feature_dim(), train_cfg.seed, train_cfg.init_scale);
  if (initial != nullptr && (!(model.assignment() == assignment) || model.feature_dim() != schema.feature_dim() ||
                             model.query_dim() != schema.query_feature_dim())) {
    throw Error("train: initial model does not match the assignment and schema");
  }
  TrainLog log;

  std::vector<QueryGroup> order(data.begin(), data.end());
  const auto total_instances = static_cast<double>(count_instances(data));
  const auto total_groups = static_cast<double>(data.size());
  std::mt19937_64 shuffle_rng(train_cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const bool score_heldout = has_both_classes(heldout);
  const auto batch = static_cast<std::size_t>(train_cfg.batch_size);

  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    const double lr = train_cfg.learning_rate * std::pow(train_cfg.lr_decay, epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    std::size_t batch_index = 0;
    for (std::size_t begin = 0; begin < order.size(); begin += batch, ++batch_index) {
      const std::size_t end = std::min(order.size(), begin + batch);
      const std::span<const QueryGroup> slice(order.data() + begin, end - begin);
      const auto batch_instances = static_cast<double>(count_instances(slice));
      if (batch_instances == 0.0) continue;
      BatchScale scale{total_instances / batch_instances, total_groups / static_cast<double>(slice.size())};
      const auto loss = compute_loss(train_cfg.objective, model, slice, costs, obj_cfg, scale);
      if (!all_finite(loss)) {
        throw TrainingError("non-finite loss or gradient at epoch " + std::to_string(epoch + 1) + ", batch " +
                            std::to_string(batch_index + 1));
      }
      auto params = model.parameters();
      const double step = lr / total_instances;
      for (std::size_t p = 0; p < params.size(); ++p) params[p] -= step * loss.gradient[p];
    }

    const auto full = compute_loss(train_cfg.objective, model, data, costs, obj_cfg);
    if (!all_finite(full)) {
      throw TrainingError("non-finite loss after epoch " + std::to_string(epoch + 1));
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.total = full.total;
    rec.nll = full.nll;
    rec.l2 = full.l2;
    rec.expected_cost = full.expected_cost;
    rec.size_penalty = full.size_penalty;
    rec.latency_penalty = full.latency_penalty;
    if (score_heldout) rec.heldout_auc = auc(final_scores(model, heldout));
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log.epochs.push_back(rec);
  }
  return {std::move(model), std::move(log)};
}

GradientCheckReport gradient_check(const CascadeModel& model, std::span<const QueryGroup> data,
                                   std::span<const double> costs, const ObjectiveConfig& cfg, Objective objective,
                                   const GradientCheckOptions& options) {
  if (!(options.step > 0.0)) throw Error("gradient_check: step must be > 0");
  const auto analytic = compute_loss(objective, model, data, costs, cfg).gradient;

  std::vector<std::size_t> coords(model.parameter_count());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  if (options.max_coordinates > 0 && options.max_coordinates < coords.size()) {
    std::mt19937_64 rng(options.seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(options.max_coordinates);
    std::sort(coords.begin(), coords.end());
  }

  GradientCheckReport report;
  CascadeModel probe = model;
  for (auto k : coords) {
    const double saved = probe.parameters()[k];
    probe.parameters()[k] = saved + options.step;
    const double up = compute_loss(objective, probe, data, costs, cfg).total;
    probe.parameters()[k] = saved - options.step;
    const double down = compute_loss(objective, probe, data, costs, cfg).total;
    probe.parameters()[k] = saved;

    const double numeric = (up - down) / (2.0 * options.step);
    const double a = analytic[k] + options.corrupt_gradient;
    const double denom = std::max({std::abs(a), std::abs(numeric), options.absolute_floor});
    const double err = std::abs(a - numeric) / denom;
    report.max_relative_error = std::max(report.max_relative_error, err);
    if (!(err <= options.tolerance)) report.failing.push_back(k);
    ++report.checked;
  }
  report.passed = report.failing.empty();
  return report;
}

void write_model(std::ostream& out, const CascadeModel& model) {
  out << "cloes-model " << kModelFormatVersion << ' ' << model.num_stages() << ' ' << model.feature_dim() << ' '
      << model.query_dim() << '\n';
  for (std::size_t j = 0; j < model.num_stages(); ++j) {
    const auto& feats = model.assignment().stage(j);
    out << "stage " << j + 1 << ' ' << feats.size();
    for (auto k : feats) out << ' ' << k;
    out << '\n';
  }
  auto emit = [&out](std::string_view tag, std::size_t j, std::span<const double> w) {
    out << tag << ' ' << j + 1;
    for (double v : w) out << ' ' << format_double(v);
    out << '\n';
  };
  for (std::size_t j = 0; j < model.num_stages(); ++j) {
    emit("item", j, model.item_weights(j));
    emit("query", j, model.query_weights(j));
  }
}

CascadeModel read_model(std::istream& in) {
  auto fail = [](const std::string& why) -> CascadeModel { throw Error("model file: " + why); };
  std::string magic;
  int version = 0;
  std::size_t stages = 0, feature_dim = 0, query_dim = 0;
  if (!(in >> magic >> version >> stages >> feature_dim >> query_dim) || magic != "cloes-model") {
    return fail("bad header");
  }
  if (version != kModelFormatVersion) return fail("unsupported format version " + std::to_string(version));
  std::vector<std::vector<std::size_t>> assignment;
  for (std::size_t j = 0; j < stages; ++j) {
    std::string tag;
    std::size_t index = 0, count = 0;
    if (!(in >> tag >> index >> count) || tag != "stage" || index != j + 1) return fail("bad stage line");
    auto& feats = assignment.emplace_back(count);
    for (auto& k : feats) {
      if (!(in >> k)) return fail("truncated stage line");
    }
  }
  CascadeModel model(StageAssignment(std::move(assignment)), feature_dim, query_dim);
  auto read_vec = [&](std::string_view expected, std::size_t j, std::span<double> dst) {
    std::string tag, token;
    std::size_t index = 0;
    if (!(in >> tag >> index) || tag != expected || index != j + 1) fail("expected '" + std::string(expected) + "' line");
    for (double& v : dst) {
      if (!(in >> token)) fail("truncated weight line");
      char* end = nullptr;
      v = std::strtod(token.c_str(), &end);
      if (end != token.c_str() + token.size() || !std::isfinite(v)) fail("bad weight '" + token + "'");
    }
  };
  for (std::size_t j = 0; j < stages; ++j) {
    read_vec("item", j, model.item_weights(j));
    read_vec("query", j, model.query_weights(j));
  }
  return model;
}

void save_model(const std::string& path, const CascadeModel& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model to '" + path + "'");
  write_model(out, model);
}

CascadeModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model '" + path + "'");
  return read_model(in);
}

}  // namespace cloes
