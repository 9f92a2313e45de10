#include "cloes/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <string_view>

namespace cloes {

namespace {

void require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw Error("datagen config: " + field + " " + why);
}

std::int64_t log_uniform(std::mt19937_64& rng, std::pair<std::int64_t, std::int64_t> range) {
  std::uniform_real_distribution<double> u(std::log(static_cast<double>(range.first)),
                                           std::log(static_cast<double>(range.second)));
  const auto v = static_cast<std::int64_t>(std::floor(std::exp(u(rng))));
  return std::clamp(v, range.first, range.second - 1);
}

std::string query_name(std::int64_t index, std::int64_t total) {
  const auto width = std::to_string(std::max<std::int64_t>(total - 1, 0)).size();
  auto digits = std::to_string(index);
  return "q" + std::string(width - std::min(width, digits.size()), '0') + digits;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& why) {
  throw Error("dataset line " + std::to_string(line) + ": " + why);
}

template <class T>
T parse_number(std::string_view text, std::size_t line, std::string_view field) {
  T value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    parse_fail(line, "bad " + std::string(field) + " value '" + std::string(text) + "'");
  }
  return value;
}

std::string_view field_value(std::string_view token, std::string_view key, std::size_t line) {
  if (token.size() <= key.size() || token.substr(0, key.size()) != key || token[key.size()] != ':') {
    parse_fail(line, "expected '" + std::string(key) + ":' field, got '" + std::string(token) + "'");
  }
  return token.substr(key.size() + 1);
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void GenConfig::validate() const {
  require(n_queries >= 1, "n_queries", "must be >= 1");
  require(head_fraction >= 0.0 && head_fraction <= 1.0, "head_fraction", "must be in [0, 1]");
  require(head_mcount_range.first >= 1 && head_mcount_range.first < head_mcount_range.second, "head_mcount_range",
          "must be a nonempty range of positive counts");
  require(tail_mcount_range.first >= 1 && tail_mcount_range.first < tail_mcount_range.second, "tail_mcount_range",
          "must be a nonempty range of positive counts");
  require(sampled_range.first >= 1 && sampled_range.first <= sampled_range.second, "sampled_range",
          "must be a nonempty range with lower bound >= 1");
  require(sample_fraction >= 0.0 && sample_fraction <= 1.0, "sample_fraction", "must be in [0, 1]");
  require(positives_ratio > 0.0 && positives_ratio < 1.0, "positives_ratio", "must be in (0, 1)");
  require(candidate_fraction > 0.0 && candidate_fraction <= 1.0, "candidate_fraction", "must be in (0, 1]");
  require(positives_ratio < candidate_fraction, "positives_ratio",
          "must be below candidate_fraction, otherwise the negative class is empty");
  require(std::isfinite(screen_gap) && screen_gap >= 0.0, "screen_gap", "must be >= 0");
  require(purchase_fraction_of_positives >= 0.0 && purchase_fraction_of_positives <= 1.0,
          "purchase_fraction_of_positives", "must be in [0, 1]");
  require(std::isfinite(purchase_price_slope), "purchase_price_slope", "must be finite");
  require(std::isfinite(price_log_mean), "price_log_mean", "must be finite");
  require(price_log_sd >= 0.0, "price_log_sd", "must be >= 0");
  for (std::size_t k = 0; k < features.size(); ++k) {
    const auto name = "features[" + std::to_string(k) + "]";
    require(std::isfinite(features[k].signal), name + ".signal", "must be finite");
    require(features[k].noise >= 0.0, name + ".noise", "must be >= 0");
    require(std::isfinite(features[k].price_loading), name + ".price_loading", "must be finite");
  }
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw Error("normal_quantile: p must be in (0, 1)");
  double lo = -40.0, hi = 40.0;
  for (int it = 0; it < 200 && hi - lo > 1e-15; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * std::erfc(-mid / std::sqrt(2.0)) < p) lo = mid; else hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::vector<QueryGroup> generate(const GenConfig& cfg, const FeatureSchema& schema) {
  cfg.validate();
  if (cfg.features.size() != schema.feature_dim()) {
    throw Error("datagen config: features has " + std::to_string(cfg.features.size()) + " entries, schema has " +
                std::to_string(schema.feature_dim()));
  }
  // P(candidate) * P(u > thr) = positives_ratio
  const double threshold = normal_quantile(1.0 - cfg.positives_ratio / cfg.candidate_fraction);
  const double purchase_logit = cfg.purchase_fraction_of_positives <= 0.0   ? -INFINITY
                                : cfg.purchase_fraction_of_positives >= 1.0 ? INFINITY
                                                                            : std::log(cfg.purchase_fraction_of_positives /
                                                                                       (1.0 - cfg.purchase_fraction_of_positives));

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<std::int64_t> sampled(cfg.sampled_range.first, cfg.sampled_range.second);

  std::vector<QueryGroup> out;
  out.reserve(static_cast<std::size_t>(cfg.n_queries));
  for (std::int64_t q = 0; q < cfg.n_queries; ++q) {
    QueryGroup group;
    group.query_id = query_name(q, cfg.n_queries);
    const bool head = unit(rng) < cfg.head_fraction;
    group.recalled_count = log_uniform(rng, head ? cfg.head_mcount_range : cfg.tail_mcount_range);
    group.query_features = schema.query_one_hot(group.recalled_count);
    const std::int64_t n =
        cfg.sample_fraction > 0.0
            ? std::clamp<std::int64_t>(
                  static_cast<std::int64_t>(std::ceil(cfg.sample_fraction * static_cast<double>(group.recalled_count))),
                  1, group.recalled_count)
            : std::min(group.recalled_count, sampled(rng));
    group.instances.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      Instance inst;
      const bool candidate = unit(rng) < cfg.candidate_fraction;
      const double u = normal(rng);
      const double latent = candidate ? u : u - cfg.screen_gap;
      const double z_price = normal(rng);
      inst.price = 1.0 + std::exp(cfg.price_log_mean + cfg.price_log_sd * z_price);
      inst.item_features.resize(cfg.features.size());
      for (std::size_t k = 0; k < cfg.features.size(); ++k) {
        const auto& f = cfg.features[k];
        inst.item_features[k] = f.signal * latent + f.price_loading * z_price + f.noise * normal(rng);
      }
      const double purchase_draw = unit(rng);
      if (candidate && u > threshold) {
        const double p_purchase = 1.0 / (1.0 + std::exp(-(purchase_logit + cfg.purchase_price_slope * z_price)));
        inst.label = purchase_draw < p_purchase ? Behavior::kPurchase : Behavior::kClick;
      }
      group.instances.push_back(std::move(inst));
    }
    out.push_back(std::move(group));
  }
  return out;
}

void write_dataset(std::ostream& out, std::span<const QueryGroup> groups) {
  std::string line;
  for (const auto& group : groups) {
    for (const auto& inst : group.instances) {
      line = "qid:" + group.query_id + " mcount:" + std::to_string(group.recalled_count) +
             " label:" + std::to_string(static_cast<int>(inst.label)) + " price:" + format_double(inst.price);
      for (std::size_t k = 0; k < inst.item_features.size(); ++k) {
        if (inst.item_features[k] != 0.0) line += ' ' + std::to_string(k) + ':' + format_double(inst.item_features[k]);
      }
      line += '\n';
      out << line;
    }
  }
}

void write_dataset(const std::string& path, std::span<const QueryGroup> groups) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset '" + path + "'");
  write_dataset(out, groups);
  if (!out) throw Error("write failed for dataset '" + path + "'");
}

std::vector<QueryGroup> read_dataset(std::istream& in, const FeatureSchema& schema) {
  std::vector<QueryGroup> groups;
  std::set<std::string, std::less<>> finished;
  std::string text;
  std::size_t line_no = 0;
  while (std::getline(in, text)) {
    ++line_no;
    const auto tokens = split_ws(text);
    if (tokens.empty()) continue;
    if (tokens.size() < 4) parse_fail(line_no, "expected qid, mcount, label and price fields");
    const auto qid = field_value(tokens[0], "qid", line_no);
    const auto mcount = parse_number<std::int64_t>(field_value(tokens[1], "mcount", line_no), line_no, "mcount");
    const auto label = parse_number<int>(field_value(tokens[2], "label", line_no), line_no, "label");
    if (label < 0 || label > 2) parse_fail(line_no, "label " + std::to_string(label) + " is not 0, 1 or 2");
    if (mcount < 1) parse_fail(line_no, "mcount must be >= 1");

    Instance inst;
    inst.label = static_cast<Behavior>(label);
    inst.price = parse_number<double>(field_value(tokens[3], "price", line_no), line_no, "price");
    inst.item_features.assign(schema.feature_dim(), 0.0);
    for (std::size_t t = 4; t < tokens.size(); ++t) {
      const auto colon = tokens[t].find(':');
      if (colon == std::string_view::npos) parse_fail(line_no, "feature '" + std::string(tokens[t]) + "' lacks ':'");
      const auto idx = parse_number<std::size_t>(tokens[t].substr(0, colon), line_no, "feature index");
      if (idx >= schema.feature_dim()) {
        parse_fail(line_no, "feature index " + std::to_string(idx) + " outside schema of " +
                                std::to_string(schema.feature_dim()));
      }
      inst.item_features[idx] = parse_number<double>(tokens[t].substr(colon + 1), line_no, "feature");
    }

    if (groups.empty() || groups.back().query_id != qid) {
      if (!groups.empty()) finished.insert(groups.back().query_id);
      if (finished.contains(qid)) parse_fail(line_no, "qid '" + std::string(qid) + "' is not contiguous");
      auto& g = groups.emplace_back();
      g.query_id = std::string(qid);
      g.recalled_count = mcount;
      g.query_features = schema.query_one_hot(mcount);
    } else if (groups.back().recalled_count != mcount) {
      parse_fail(line_no, "mcount changes within qid '" + std::string(qid) + "'");
    }
    groups.back().instances.push_back(std::move(inst));
  }
  return groups;
}

std::vector<QueryGroup> read_dataset(const std::string& path, const FeatureSchema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return read_dataset(in, schema);
}

std::pair<std::vector<QueryGroup>, std::vector<QueryGroup>> split_groups(std::span<const QueryGroup> groups,
                                                                         double test_fraction, std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction <= 1.0)) throw Error("split: test fraction must be in [0, 1]");
  std::vector<std::size_t> order(groups.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(groups.size())));
  std::vector<bool> is_test(groups.size(), false);
  for (std::size_t i = 0; i < n_test; ++i) is_test[order[i]] = true;
  std::pair<std::vector<QueryGroup>, std::vector<QueryGroup>> out;
  for (std::size_t i = 0; i < groups.size(); ++i) (is_test[i] ? out.second : out.first).push_back(groups[i]);
  return out;
}

}  // namespace cloes
