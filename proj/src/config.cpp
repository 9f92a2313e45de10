#include "cloes/config.hpp"

#include <fstream>
#include <set>

namespace cloes {

using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects anything else.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error("config: '" + path_ + "' must be an object");
  }

  template <class T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error("config: '" + name(key) + "' has the wrong type");
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw Error("config: unknown key '" + (path_.empty() ? key : path_ + "." + key) + "'");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class Fn>
void with_section(Section& parent, const char* key, Fn&& fn) {
  if (!parent.has(key)) return;
  Section s(parent.at(key), parent.name(key));
  fn(s);
  s.finish();
}

template <class Fn>
void wrap(const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    throw Error("config: " + field + ": " + e.what());
  }
}

std::pair<std::int64_t, std::int64_t> read_range(const json& j, const std::string& field) {
  if (!j.is_array() || j.size() != 2 || !j[0].is_number_integer() || !j[1].is_number_integer()) {
    throw Error("config: '" + field + "' must be a two-element integer array");
  }
  return {j[0].get<std::int64_t>(), j[1].get<std::int64_t>()};
}

}  // namespace

void Config::validate() const {
  wrap("objective", [&] { objective.validate(); });
  wrap("train", [&] { train.validate(); });
  datagen.validate();
  wrap("stages", [&] { assignment().validate(schema); });
  if (datagen.features.size() != schema.feature_dim()) {
    throw Error("config: datagen.features needs one entry per schema feature (" +
                std::to_string(schema.feature_dim()) + ")");
  }
  if (!(eval.test_fraction > 0.0 && eval.test_fraction < 1.0)) throw Error("config: eval.test_fraction must be in (0, 1)");
  if (eval.keep_k < 1) throw Error("config: eval.keep_k must be >= 1");
  if (!(eval.cost_units_per_ms > 0.0)) throw Error("config: eval.cost_units_per_ms must be > 0");
  if (!schema.find(eval.filter_feature)) throw Error("config: eval.filter_feature '" + eval.filter_feature + "' not in schema");
  if (eval.cheap_features.empty()) throw Error("config: eval.cheap_features must not be empty");
  for (const auto& name : eval.cheap_features) {
    if (!schema.find(name)) throw Error("config: eval.cheap_features entry '" + name + "' not in schema");
  }
  if (!(simulate.traffic_multiplier > 0.0)) throw Error("config: simulate.traffic_multiplier must be > 0");
}

Config config_from_json(const json& j) {
  Config cfg;
  Section root(j, "");

  with_section(root, "schema", [&](Section& s) {
    std::vector<Feature> features = cfg.schema.features();
    std::vector<double> edges = cfg.schema.query_bin_edges();
    if (s.has("features")) {
      const auto& arr = s.at("features");
      if (!arr.is_array()) throw Error("config: 'schema.features' must be an array");
      features.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Section f(arr[i], "schema.features[" + std::to_string(i) + "]");
        Feature feat;
        std::string kind = std::string(to_string(feat.kind));
        f.get("name", feat.name);
        f.get("cost", feat.cost);
        f.get("kind", kind);
        f.finish();
        wrap(f.name("kind"), [&] { feat.kind = feature_kind_from_string(kind); });
        features.push_back(std::move(feat));
      }
    }
    s.get("query_bin_edges", edges);
    wrap("schema", [&] { cfg.schema = FeatureSchema(std::move(features), std::move(edges)); });
  });

  root.get("stages", cfg.stages);

  with_section(root, "objective", [&](Section& s) {
    auto& o = cfg.objective;
    s.get("alpha", o.alpha);
    s.get("beta", o.beta);
    s.get("gamma", o.gamma);
    s.get("delta", o.delta);
    s.get("latency_penalty_weight", o.latency_penalty_weight);
    s.get("result_floor", o.result_floor);
    s.get("latency_ceiling", o.latency_ceiling);
    s.get("purchase_weight", o.purchase_weight);
    s.get("price_weight", o.price_weight);
    s.get("use_importance_weights", o.use_importance_weights);
    s.get("squared_l2", o.squared_l2);
    s.get("penalty_per_instance", o.penalty_per_instance);
    s.get("latency_survivor_form", o.latency_survivor_form);
  });

  with_section(root, "train", [&](Section& s) {
    auto& t = cfg.train;
    std::string objective(to_string(t.objective));
    s.get("objective", objective);
    wrap("train.objective", [&] { t.objective = objective_from_string(objective); });
    s.get("learning_rate", t.learning_rate);
    s.get("lr_decay", t.lr_decay);
    s.get("epochs", t.epochs);
    s.get("batch_size", t.batch_size);
    s.get("seed", t.seed);
    s.get("init_scale", t.init_scale);
  });

  with_section(root, "datagen", [&](Section& s) {
    auto& d = cfg.datagen;
    s.get("n_queries", d.n_queries);
    s.get("seed", d.seed);
    s.get("head_fraction", d.head_fraction);
    if (s.has("head_mcount_range")) d.head_mcount_range = read_range(s.at("head_mcount_range"), s.name("head_mcount_range"));
    if (s.has("tail_mcount_range")) d.tail_mcount_range = read_range(s.at("tail_mcount_range"), s.name("tail_mcount_range"));
    if (s.has("sampled_range")) d.sampled_range = read_range(s.at("sampled_range"), s.name("sampled_range"));
    s.get("sample_fraction", d.sample_fraction);
    s.get("positives_ratio", d.positives_ratio);
    s.get("candidate_fraction", d.candidate_fraction);
    s.get("screen_gap", d.screen_gap);
    s.get("purchase_fraction_of_positives", d.purchase_fraction_of_positives);
    s.get("purchase_price_slope", d.purchase_price_slope);
    s.get("price_log_mean", d.price_log_mean);
    s.get("price_log_sd", d.price_log_sd);
    if (s.has("features")) {
      const auto& arr = s.at("features");
      if (!arr.is_array()) throw Error("config: 'datagen.features' must be an array");
      d.features.clear();
      for (std::size_t i = 0; i < arr.size(); ++i) {
        Section f(arr[i], "datagen.features[" + std::to_string(i) + "]");
        FeatureQuality q;
        f.get("signal", q.signal);
        f.get("noise", q.noise);
        f.get("price_loading", q.price_loading);
        f.finish();
        d.features.push_back(q);
      }
    }
  });

  with_section(root, "eval", [&](Section& s) {
    auto& e = cfg.eval;
    s.get("test_fraction", e.test_fraction);
    s.get("split_seed", e.split_seed);
    s.get("filter_feature", e.filter_feature);
    s.get("keep_k", e.keep_k);
    s.get("cheap_features", e.cheap_features);
    s.get("cost_units_per_ms", e.cost_units_per_ms);
  });

  with_section(root, "simulate", [&](Section& s) {
    s.get("traffic_multiplier", cfg.simulate.traffic_multiplier);
    s.get("stochastic", cfg.simulate.stochastic);
    s.get("seed", cfg.simulate.seed);
  });

  root.finish();
  return cfg;
}

json config_to_json(const Config& cfg) {
  json features = json::array();
  for (const auto& f : cfg.schema.features()) {
    features.push_back({{"name", f.name}, {"cost", f.cost}, {"kind", std::string(to_string(f.kind))}});
  }
  json qualities = json::array();
  for (const auto& q : cfg.datagen.features) {
    qualities.push_back({{"signal", q.signal}, {"noise", q.noise}, {"price_loading", q.price_loading}});
  }
  const auto& o = cfg.objective;
  const auto& t = cfg.train;
  const auto& d = cfg.datagen;
  const auto& e = cfg.eval;
  auto range = [](const std::pair<std::int64_t, std::int64_t>& r) { return json::array({r.first, r.second}); };
  return {
      {"schema", {{"features", features}, {"query_bin_edges", cfg.schema.query_bin_edges()}}},
      {"stages", cfg.stages},
      {"objective",
       {{"alpha", o.alpha},
        {"beta", o.beta},
        {"gamma", o.gamma},
        {"delta", o.delta},
        {"latency_penalty_weight", o.latency_penalty_weight},
        {"result_floor", o.result_floor},
        {"latency_ceiling", o.latency_ceiling},
        {"purchase_weight", o.purchase_weight},
        {"price_weight", o.price_weight},
        {"use_importance_weights", o.use_importance_weights},
        {"squared_l2", o.squared_l2},
        {"penalty_per_instance", o.penalty_per_instance},
        {"latency_survivor_form", o.latency_survivor_form}}},
      {"train",
       {{"objective", std::string(to_string(t.objective))},
        {"learning_rate", t.learning_rate},
        {"lr_decay", t.lr_decay},
        {"epochs", t.epochs},
        {"batch_size", t.batch_size},
        {"seed", t.seed},
        {"init_scale", t.init_scale}}},
      {"datagen",
       {{"n_queries", d.n_queries},
        {"seed", d.seed},
        {"head_fraction", d.head_fraction},
        {"head_mcount_range", range(d.head_mcount_range)},
        {"tail_mcount_range", range(d.tail_mcount_range)},
        {"sampled_range", range(d.sampled_range)},
        {"sample_fraction", d.sample_fraction},
        {"positives_ratio", d.positives_ratio},
        {"candidate_fraction", d.candidate_fraction},
        {"screen_gap", d.screen_gap},
        {"purchase_fraction_of_positives", d.purchase_fraction_of_positives},
        {"purchase_price_slope", d.purchase_price_slope},
        {"price_log_mean", d.price_log_mean},
        {"price_log_sd", d.price_log_sd},
        {"features", qualities}}},
      {"eval",
       {{"test_fraction", e.test_fraction},
        {"split_seed", e.split_seed},
        {"filter_feature", e.filter_feature},
        {"keep_k", e.keep_k},
        {"cheap_features", e.cheap_features},
        {"cost_units_per_ms", e.cost_units_per_ms}}},
      {"simulate",
       {{"traffic_multiplier", cfg.simulate.traffic_multiplier},
        {"stochastic", cfg.simulate.stochastic},
        {"seed", cfg.simulate.seed}}},
  };
}

Config load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

}  // namespace cloes
