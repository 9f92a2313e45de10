#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cloes/core.hpp"

namespace cloes::test {

using Stages = std::vector<std::vector<std::size_t>>;

inline Instance item(std::vector<double> features, Behavior label = Behavior::kNone, double price = 2.0) {
  Instance i;
  i.item_features = std::move(features);
  i.label = label;
  i.price = price;
  return i;
}

inline QueryGroup group(const FeatureSchema& schema, std::string id, std::int64_t recalled,
                        std::vector<Instance> instances) {
  QueryGroup g;
  g.query_id = std::move(id);
  g.recalled_count = recalled;
  g.query_features = schema.query_one_hot(recalled);
  g.instances = std::move(instances);
  return g;
}

/// Small random dataset with both labels, Gaussian features and mixed behaviors.
inline std::vector<QueryGroup> random_groups(const FeatureSchema& schema, std::size_t n_groups, std::size_t per_group,
                                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::int64_t recalled[] = {40, 400, 4000, 25};
  std::vector<QueryGroup> out;
  for (std::size_t q = 0; q < n_groups; ++q) {
    std::vector<Instance> items;
    for (std::size_t i = 0; i < per_group; ++i) {
      std::vector<double> f(schema.feature_dim());
      for (auto& v : f) v = normal(rng);
      const double r = u(rng);
      const Behavior b = r < 0.15 ? Behavior::kClick : r < 0.22 ? Behavior::kPurchase : Behavior::kNone;
      items.push_back(item(std::move(f), b, 1.0 + 20.0 * u(rng)));
    }
    const auto m = std::max<std::int64_t>(recalled[q % 4], static_cast<std::int64_t>(per_group));
    out.push_back(group(schema, "g" + std::to_string(q), m, std::move(items)));
  }
  return out;
}

}  // namespace cloes::test
