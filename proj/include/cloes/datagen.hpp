#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cloes/core.hpp"

namespace cloes {

/// How informative one item feature is: value = signal * latent
/// + price_loading * z_price + noise * N(0, 1).
struct FeatureQuality {
  double signal = 0.0;
  double noise = 0.25;
  double price_loading = 0.0;
};

struct GenConfig {
  std::int64_t n_queries = 2000;
  std::uint64_t seed = 1;

  double head_fraction = 0.2;
  std::pair<std::int64_t, std::int64_t> head_mcount_range{1000, 8000};  // [lo, hi)
  std::pair<std::int64_t, std::int64_t> tail_mcount_range{200, 1000};
  std::pair<std::int64_t, std::int64_t> sampled_range{15, 25};  // N_q, inclusive
  /// When > 0, N_q = ceil(sample_fraction * M_q) instead of a draw from
  /// sampled_range; 1 samples every recalled item, for serve-time replay.
  double sample_fraction = 0.0;

  double positives_ratio = 0.09;
  /// Share of items that are plausible matches; the rest sit screen_gap below
  /// on the latent scale and are never positive.
  double candidate_fraction = 0.5;
  double screen_gap = 25.0;

  double purchase_fraction_of_positives = 0.1;
  /// Logit slope of P(purchase | positive) in the standardized log price.
  double purchase_price_slope = 0.0;

  double price_log_mean = 3.0;
  double price_log_sd = 0.8;

  /// One entry per schema feature.
  std::vector<FeatureQuality> features{
      {0.0375, 0.25, 0.0}, {0.05, 0.25, 0.0}, {0.125, 0.25, 0.0}, {0.2, 0.25, 0.0}, {0.275, 0.25, 0.0}};

  /// Throws naming the offending field.
  void validate() const;
};

/// Deterministic in cfg.seed. Prices are 1 + lognormal, so log(price) > 0.
std::vector<QueryGroup> generate(const GenConfig& cfg, const FeatureSchema& schema);

/// Φ^{-1}(p) for p in (0, 1).
double normal_quantile(double p);

void write_dataset(std::ostream& out, std::span<const QueryGroup> groups);
void write_dataset(const std::string& path, std::span<const QueryGroup> groups);
std::vector<QueryGroup> read_dataset(std::istream& in, const FeatureSchema& schema);
std::vector<QueryGroup> read_dataset(const std::string& path, const FeatureSchema& schema);

/// Seeded random split by whole query groups; both halves keep input order.
std::pair<std::vector<QueryGroup>, std::vector<QueryGroup>> split_groups(std::span<const QueryGroup> groups,
                                                                         double test_fraction, std::uint64_t seed);

}  // namespace cloes
