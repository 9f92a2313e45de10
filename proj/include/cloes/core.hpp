#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cloes {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Vector lengths disagree with the schema or model shape.
class DimensionError : public Error {
 public:
  using Error::Error;
};

enum class FeatureKind { kStatistical, kPredictive };

std::string_view to_string(FeatureKind kind);
FeatureKind feature_kind_from_string(std::string_view text);

struct Feature {
  std::string name;
  double cost = 0.0;
  FeatureKind kind = FeatureKind::kStatistical;
};

/// Item features with their per-item evaluation cost, plus the bin edges that
/// turn a recalled-item count into the one-hot query vector g(q).
///
/// Bin i covers [edges[i], edges[i+1]); the last bin is open above. Counts
/// below edges[0] fall into bin 0. Query features carry no cost.
class FeatureSchema {
 public:
  FeatureSchema(std::vector<Feature> features, std::vector<double> query_bin_edges);

  const std::vector<Feature>& features() const { return features_; }
  std::size_t feature_dim() const { return features_.size(); }
  std::size_t query_feature_dim() const { return bin_edges_.size(); }
  const std::vector<double>& query_bin_edges() const { return bin_edges_; }

  const Feature& feature(std::size_t index) const;
  std::optional<std::size_t> find(std::string_view name) const;
  std::size_t index_of(std::string_view name) const;

  std::size_t query_bin(std::int64_t recalled_count) const;
  std::vector<double> query_one_hot(std::int64_t recalled_count) const;

 private:
  std::vector<Feature> features_;
  std::vector<double> bin_edges_;
};

/// Five query-item features with the costs of the production feature table,
/// and log-spaced recalled-count bins [1,10), [10,100), ..., [100k, inf).
FeatureSchema default_schema();

/// Which schema features each cascade stage evaluates. Stages are 0-based.
class StageAssignment {
 public:
  explicit StageAssignment(std::vector<std::vector<std::size_t>> stages);

  static StageAssignment from_names(const FeatureSchema& schema,
                                    const std::vector<std::vector<std::string>>& names);

  std::size_t num_stages() const { return stages_.size(); }
  const std::vector<std::size_t>& stage(std::size_t j) const;
  const std::vector<std::vector<std::size_t>>& stages() const { return stages_; }

  /// Throws if a feature index is outside the schema or a stage is free.
  void validate(const FeatureSchema& schema) const;

  bool operator==(const StageAssignment&) const = default;

 private:
  std::vector<std::vector<std::size_t>> stages_;
};

/// {Sales Volume, PostPay Score} -> {Click-Through-Rate} -> {Relevance Score, Deep & Wide}.
StageAssignment default_assignment(const FeatureSchema& schema);

/// t_j: summed schema cost of the features evaluated by stage j.
double stage_cost(const StageAssignment& assignment, const FeatureSchema& schema, std::size_t j);
std::vector<double> stage_costs(const StageAssignment& assignment, const FeatureSchema& schema);

enum class Behavior : std::uint8_t { kNone = 0, kClick = 1, kPurchase = 2 };

struct Instance {
  std::vector<double> item_features;
  Behavior label = Behavior::kNone;
  double price = 1.0;

  bool positive() const { return label != Behavior::kNone; }
  bool operator==(const Instance&) const = default;
};

struct QueryGroup {
  std::string query_id;
  std::vector<double> query_features;
  std::int64_t recalled_count = 1;
  std::vector<Instance> instances;

  std::size_t sampled_count() const { return instances.size(); }
  bool operator==(const QueryGroup&) const = default;
};

struct Violation {
  std::size_t group = 0;
  std::optional<std::size_t> instance;
  std::string message;
};

/// Report-based check of dataset well-formedness; an empty result means valid.
std::vector<Violation> validate_dataset(std::span<const QueryGroup> groups, const FeatureSchema& schema);

std::size_t count_instances(std::span<const QueryGroup> groups);

/// Per-stage logistic weights. Parameters are stored flat, stage by stage, as
/// [item weights of stage j | query weights of stage j].
class CascadeModel {
 public:
  CascadeModel(StageAssignment assignment, std::size_t feature_dim, std::size_t query_dim);

  std::size_t num_stages() const { return assignment_.num_stages(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t query_dim() const { return query_dim_; }
  const StageAssignment& assignment() const { return assignment_; }

  std::span<const double> item_weights(std::size_t j) const;
  std::span<double> item_weights(std::size_t j);
  std::span<const double> query_weights(std::size_t j) const;
  std::span<double> query_weights(std::size_t j);

  std::span<const double> parameters() const { return params_; }
  std::span<double> parameters() { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  /// Offset of stage j's first item weight within parameters().
  std::size_t stage_offset(std::size_t j) const { return offsets_.at(j); }

  bool operator==(const CascadeModel&) const = default;

 private:
  StageAssignment assignment_;
  std::size_t feature_dim_;
  std::size_t query_dim_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

}  // namespace cloes
