#include "cloes/cascade.hpp"

#include <cmath>

namespace cloes {

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double log_sigmoid(double z) {
  if (z >= 0.0) return -std::log1p(std::exp(-z));
  return z - std::log1p(std::exp(z));
}

double stage_logit(const CascadeModel& model, std::span<const double> query_features,
                   std::span<const double> item_features, std::size_t j) {
  if (item_features.size() != model.feature_dim()) {
    throw DimensionError("item feature vector has length " + std::to_string(item_features.size()) + ", model expects " +
                         std::to_string(model.feature_dim()));
  }
  if (query_features.size() != model.query_dim()) {
    throw DimensionError("query feature vector has length " + std::to_string(query_features.size()) +
                         ", model expects " + std::to_string(model.query_dim()));
  }
  const auto& feats = model.assignment().stage(j);
  const auto wx = model.item_weights(j);
  const auto wq = model.query_weights(j);
  double z = 0.0;
  for (std::size_t k = 0; k < feats.size(); ++k) z += wx[k] * item_features[feats[k]];
  for (std::size_t b = 0; b < wq.size(); ++b) z += wq[b] * query_features[b];
  return z;
}

double stage_probability(const CascadeModel& model, const QueryGroup& group, std::span<const double> item_features,
                         std::size_t j) {
  return sigmoid(stage_logit(model, group.query_features, item_features, j));
}

StageProbs cascade_probabilities(const CascadeModel& model, const QueryGroup& group,
                                 std::span<const double> item_features) {
  StageProbs out;
  const std::size_t stages = model.num_stages();
  out.per_stage.reserve(stages);
  out.cumulative.reserve(stages);
  double pass = 1.0;
  for (std::size_t j = 0; j < stages; ++j) {
    const double p = stage_probability(model, group, item_features, j);
    pass *= p;
    out.per_stage.push_back(p);
    out.cumulative.push_back(pass);
  }
  out.final = pass;
  return out;
}

std::vector<StageProbs> score_group(const CascadeModel& model, const QueryGroup& group) {
  std::vector<StageProbs> out;
  out.reserve(group.instances.size());
  for (const auto& inst : group.instances) out.push_back(cascade_probabilities(model, group, inst.item_features));
  return out;
}

}  // namespace cloes
