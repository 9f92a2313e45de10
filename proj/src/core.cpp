#include "cloes/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

namespace cloes {

std::string_view to_string(FeatureKind kind) {
  return kind == FeatureKind::kStatistical ? "statistical" : "predictive";
}

FeatureKind feature_kind_from_string(std::string_view text) {
  if (text == "statistical") return FeatureKind::kStatistical;
  if (text == "predictive") return FeatureKind::kPredictive;
  throw Error("unknown feature kind '" + std::string(text) + "'");
}

FeatureSchema::FeatureSchema(std::vector<Feature> features, std::vector<double> query_bin_edges)
    : features_(std::move(features)), bin_edges_(std::move(query_bin_edges)) {
  std::unordered_set<std::string> names;
  for (const auto& f : features_) {
    if (!names.insert(f.name).second) throw Error("duplicate feature name '" + f.name + "'");
    if (!(f.cost >= 0.0) || !std::isfinite(f.cost)) {
      throw Error("feature '" + f.name + "' has a negative or non-finite cost");
    }
  }
  if (bin_edges_.empty()) throw Error("query_feature_dim must be at least 1 (no bin edges)");
  for (std::size_t i = 1; i < bin_edges_.size(); ++i) {
    if (!(bin_edges_[i] > bin_edges_[i - 1])) throw Error("query bin edges must be strictly ascending");
  }
}

const Feature& FeatureSchema::feature(std::size_t index) const {
  if (index >= features_.size()) throw Error("feature index " + std::to_string(index) + " not in schema");
  return features_[index];
}

std::optional<std::size_t> FeatureSchema::find(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i) {
    if (features_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t FeatureSchema::index_of(std::string_view name) const {
  auto idx = find(name);
  if (!idx) throw Error("unknown feature '" + std::string(name) + "'");
  return *idx;
}

std::size_t FeatureSchema::query_bin(std::int64_t recalled_count) const {
  const auto value = static_cast<double>(recalled_count);
  auto it = std::upper_bound(bin_edges_.begin(), bin_edges_.end(), value);
  if (it == bin_edges_.begin()) return 0;
  return static_cast<std::size_t>(std::distance(bin_edges_.begin(), it)) - 1;
}

std::vector<double> FeatureSchema::query_one_hot(std::int64_t recalled_count) const {
  std::vector<double> g(query_feature_dim(), 0.0);
  g[query_bin(recalled_count)] = 1.0;
  return g;
}

FeatureSchema default_schema() {
  return FeatureSchema(
      {
          {"Sales Volume", 0.02, FeatureKind::kStatistical},
          {"PostPay Score", 0.09, FeatureKind::kStatistical},
          {"Click-Through-Rate", 0.13, FeatureKind::kPredictive},
          {"Relevance Score", 0.74, FeatureKind::kPredictive},
          {"Deep & Wide", 0.84, FeatureKind::kPredictive},
      },
      {1.0, 10.0, 100.0, 1000.0, 10000.0, 100000.0});
}

StageAssignment::StageAssignment(std::vector<std::vector<std::size_t>> stages) : stages_(std::move(stages)) {
  if (stages_.empty()) throw Error("a cascade needs at least one stage");
  std::set<std::size_t> seen;
  for (std::size_t j = 0; j < stages_.size(); ++j) {
    if (stages_[j].empty()) throw Error("stage " + std::to_string(j + 1) + " has no features");
    for (auto k : stages_[j]) {
      if (!seen.insert(k).second) {
        throw Error("feature index " + std::to_string(k) + " assigned to more than one stage");
      }
    }
  }
}

StageAssignment StageAssignment::from_names(const FeatureSchema& schema,
                                            const std::vector<std::vector<std::string>>& names) {
  std::vector<std::vector<std::size_t>> stages;
  for (const auto& stage : names) {
    auto& out = stages.emplace_back();
    for (const auto& n : stage) out.push_back(schema.index_of(n));
  }
  StageAssignment a(std::move(stages));
  a.validate(schema);
  return a;
}

const std::vector<std::size_t>& StageAssignment::stage(std::size_t j) const {
  if (j >= stages_.size()) {
    throw Error("stage index " + std::to_string(j) + " out of range (T = " + std::to_string(stages_.size()) + ")");
  }
  return stages_[j];
}

void StageAssignment::validate(const FeatureSchema& schema) const {
  for (std::size_t j = 0; j < stages_.size(); ++j) {
    for (auto k : stages_[j]) {
      if (k >= schema.feature_dim()) throw Error("feature index " + std::to_string(k) + " not in schema");
    }
    if (!(stage_cost(*this, schema, j) > 0.0)) {
      throw Error("stage " + std::to_string(j + 1) + " has zero cost");
    }
  }
}

StageAssignment default_assignment(const FeatureSchema& schema) {
  return StageAssignment::from_names(schema, {{"Sales Volume", "PostPay Score"},
                                              {"Click-Through-Rate"},
                                              {"Relevance Score", "Deep & Wide"}});
}

double stage_cost(const StageAssignment& assignment, const FeatureSchema& schema, std::size_t j) {
  double total = 0.0;
  for (auto k : assignment.stage(j)) total += schema.feature(k).cost;
  return total;
}

std::vector<double> stage_costs(const StageAssignment& assignment, const FeatureSchema& schema) {
  std::vector<double> costs;
  costs.reserve(assignment.num_stages());
  for (std::size_t j = 0; j < assignment.num_stages(); ++j) costs.push_back(stage_cost(assignment, schema, j));
  return costs;
}

std::vector<Violation> validate_dataset(std::span<const QueryGroup> groups, const FeatureSchema& schema) {
  std::vector<Violation> out;
  std::unordered_set<std::string> seen_ids;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& group = groups[g];
    auto report = [&](std::optional<std::size_t> i, std::string msg) {
      out.push_back({g, i, "query '" + group.query_id + "'" +
                               (i ? " instance " + std::to_string(*i) : std::string()) + ": " + std::move(msg)});
    };
    if (!seen_ids.insert(group.query_id).second) report(std::nullopt, "duplicate query id");
    if (group.query_features.size() != schema.query_feature_dim()) {
      report(std::nullopt, "query vector has length " + std::to_string(group.query_features.size()) +
                               ", expected " + std::to_string(schema.query_feature_dim()));
    } else {
      std::size_t nonzero = 0;
      bool ones = true;
      for (double v : group.query_features) {
        if (v != 0.0) {
          ++nonzero;
          ones = ones && v == 1.0;
        }
      }
      if (nonzero != 1 || !ones) report(std::nullopt, "query vector is not one-hot");
    }
    if (group.instances.empty()) report(std::nullopt, "no instances");
    if (group.recalled_count < static_cast<std::int64_t>(group.instances.size())) {
      report(std::nullopt, "recalled count " + std::to_string(group.recalled_count) + " is below sampled count " +
                               std::to_string(group.instances.size()));
    }
    for (std::size_t i = 0; i < group.instances.size(); ++i) {
      const auto& inst = group.instances[i];
      if (inst.item_features.size() != schema.feature_dim()) {
        report(i, "feature vector has length " + std::to_string(inst.item_features.size()) + ", expected " +
                      std::to_string(schema.feature_dim()));
      }
      if (!std::all_of(inst.item_features.begin(), inst.item_features.end(),
                       [](double v) { return std::isfinite(v); })) {
        report(i, "non-finite feature value");
      }
      if (!(inst.price > 0.0) || !std::isfinite(inst.price)) report(i, "price must be positive");
      if (static_cast<int>(inst.label) > 2) report(i, "label outside {none, click, purchase}");
    }
  }
  return out;
}

std::size_t count_instances(std::span<const QueryGroup> groups) {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.instances.size();
  return n;
}

CascadeModel::CascadeModel(StageAssignment assignment, std::size_t feature_dim, std::size_t query_dim)
    : assignment_(std::move(assignment)), feature_dim_(feature_dim), query_dim_(query_dim) {
  if (query_dim_ == 0) throw DimensionError("query_dim must be at least 1");
  std::size_t offset = 0;
  for (const auto& stage : assignment_.stages()) {
    for (auto k : stage) {
      if (k >= feature_dim_) throw DimensionError("stage feature index " + std::to_string(k) + " exceeds d_x");
    }
    offsets_.push_back(offset);
    offset += stage.size() + query_dim_;
  }
  params_.assign(offset, 0.0);
}

std::span<const double> CascadeModel::item_weights(std::size_t j) const {
  return std::span<const double>(params_).subspan(offsets_.at(j), assignment_.stage(j).size());
}

std::span<double> CascadeModel::item_weights(std::size_t j) {
  return std::span<double>(params_).subspan(offsets_.at(j), assignment_.stage(j).size());
}

std::span<const double> CascadeModel::query_weights(std::size_t j) const {
  return std::span<const double>(params_).subspan(offsets_.at(j) + assignment_.stage(j).size(), query_dim_);
}

std::span<double> CascadeModel::query_weights(std::size_t j) {
  return std::span<double>(params_).subspan(offsets_.at(j) + assignment_.stage(j).size(), query_dim_);
}

}  // namespace cloes
