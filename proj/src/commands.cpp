#include "cloes/commands.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <ostream>

#include "CLI11.hpp"

#include "cloes/evaluator.hpp"
#include "cloes/simulator.hpp"

namespace cloes {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string_view split_name(Split s) {
  switch (s) {
    case Split::kAll: return "all";
    case Split::kTrain: return "train";
    case Split::kTest: return "test";
  }
  return "all";
}

Split split_from_string(std::string_view text) {
  if (text == "all") return Split::kAll;
  if (text == "train") return Split::kTrain;
  if (text == "test") return Split::kTest;
  throw Error("unknown split '" + std::string(text) + "' (expected all, train or test)");
}

std::string absolute_or_empty(const std::string& path) {
  return path.empty() ? path : fs::absolute(path).lexically_normal().string();
}

std::string out_path(const CommandOptions& o, const char* name) { return (fs::path(o.out_dir) / name).string(); }

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  return out;
}

std::vector<QueryGroup> load_split(const CommandOptions& o, Split fallback) {
  if (o.dataset_path.empty()) throw Error("--dataset is required for '" + o.command + "'");
  auto groups = read_dataset(o.dataset_path, o.config.schema);
  const auto violations = validate_dataset(groups, o.config.schema);
  if (!violations.empty()) {
    const auto& v = violations.front();
    throw Error("dataset '" + o.dataset_path + "' is invalid (" + std::to_string(violations.size()) +
                " violations); first: group " + std::to_string(v.group) + ": " + v.message);
  }
  const Split which = o.split.value_or(fallback);
  if (which == Split::kAll) return groups;
  auto [train, test] = split_groups(groups, o.config.eval.test_fraction, o.config.eval.split_seed);
  return which == Split::kTrain ? std::move(train) : std::move(test);
}

void check_model_schema(const CascadeModel& model, const Config& cfg) {
  if (model.feature_dim() != cfg.schema.feature_dim() || model.query_dim() != cfg.schema.query_feature_dim()) {
    throw Error("model shape (" + std::to_string(model.feature_dim()) + " item, " + std::to_string(model.query_dim()) +
                " query features) does not match the schema (" + std::to_string(cfg.schema.feature_dim()) + ", " +
                std::to_string(cfg.schema.query_feature_dim()) + ")");
  }
  model.assignment().validate(cfg.schema);
}

std::uint64_t command_seed(const CommandOptions& o) {
  if (o.command == "datagen") return o.config.datagen.seed;
  if (o.command == "simulate") return o.config.simulate.seed;
  return o.config.train.seed;
}

void write_manifest(const CommandOptions& o, const std::vector<std::string>& outputs, double wall_seconds) {
  json j = options_to_json(o);
  j["seed"] = command_seed(o);
  j["outputs"] = json::array();
  for (const auto& name : outputs) j["outputs"].push_back(absolute_or_empty(out_path(o, name.c_str())));
  j["version"] = kToolVersion;
  j["wall_seconds"] = wall_seconds;
  auto out = open_out(out_path(o, "manifest.json"));
  out << j.dump(2) << '\n';
}

template <class Fn>
int guarded(const CommandOptions& o, std::ostream& err, Fn&& body) {
  const auto start = std::chrono::steady_clock::now();
  try {
    o.config.validate();
    fs::create_directories(o.out_dir);
    std::vector<std::string> outputs = body();
    write_manifest(o, outputs, std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
    return 0;
  } catch (const std::exception& e) {
    err << "cloes " << o.command << ": error: " << e.what() << '\n';
    return 1;
  }
}

void write_train_log(std::ostream& out, const TrainLog& log) {
  for (const auto& r : log.epochs) {
    json j = {{"epoch", r.epoch},
              {"total", r.total},
              {"nll", r.nll},
              {"l2", r.l2},
              {"expected_cost", r.expected_cost},
              {"size_penalty", r.size_penalty},
              {"latency_penalty", r.latency_penalty},
              {"wall_seconds", r.wall_seconds}};
    j["heldout_auc"] = std::isnan(r.heldout_auc) ? json(nullptr) : json(r.heldout_auc);
    out << j.dump() << '\n';
  }
}

std::vector<std::size_t> indices_of(const FeatureSchema& schema, const std::vector<std::string>& names) {
  std::vector<std::size_t> out;
  for (const auto& n : names) out.push_back(schema.index_of(n));
  return out;
}

}  // namespace

json options_to_json(const CommandOptions& o) {
  json j = {{"command", o.command},
            {"config_path", absolute_or_empty(o.config_path)},
            {"config", config_to_json(o.config)},
            {"dataset", absolute_or_empty(o.dataset_path)},
            {"model", absolute_or_empty(o.model_path)},
            {"out_dir", absolute_or_empty(o.out_dir)}};
  if (o.split) j["split"] = std::string(split_name(*o.split));
  if (o.command == "eval") j["compare"] = o.compare;
  if (o.command == "gradcheck") {
    j["gradcheck"] = {{"tolerance", o.tolerance},
                      {"step", o.step},
                      {"init_scale", o.init_scale},
                      {"corrupt_gradient", o.corrupt_gradient}};
  }
  return j;
}

CommandOptions options_from_manifest(const json& m) {
  try {
    CommandOptions o;
    o.command = m.at("command").get<std::string>();
    o.config_path = m.value("config_path", std::string());
    o.config = config_from_json(m.at("config"));
    o.dataset_path = m.value("dataset", std::string());
    o.model_path = m.value("model", std::string());
    o.out_dir = m.value("out_dir", std::string("."));
    if (m.contains("split")) o.split = split_from_string(m.at("split").get<std::string>());
    o.compare = m.value("compare", false);
    if (m.contains("gradcheck")) {
      const auto& g = m.at("gradcheck");
      o.tolerance = g.at("tolerance").get<double>();
      o.step = g.at("step").get<double>();
      o.init_scale = g.at("init_scale").get<double>();
      o.corrupt_gradient = g.at("corrupt_gradient").get<double>();
    }
    return o;
  } catch (const json::exception& e) {
    throw Error(std::string("manifest: ") + e.what());
  }
}

int cmd_datagen(const CommandOptions& o, std::ostream& err) {
  return guarded(o, err, [&] {
    const auto groups = generate(o.config.datagen, o.config.schema);
    write_dataset(out_path(o, "dataset.txt"), groups);
    return std::vector<std::string>{"dataset.txt"};
  });
}

int cmd_train(const CommandOptions& o, std::ostream& err) {
  return guarded(o, err, [&] {
    const auto data = load_split(o, Split::kTrain);
    const auto result = train(data, o.config.schema, o.config.assignment(), o.config.objective, o.config.train);
    save_model(out_path(o, "model.txt"), result.model);
    auto log = open_out(out_path(o, "trainlog.ndjson"));
    write_train_log(log, result.log);
    return std::vector<std::string>{"model.txt", "trainlog.ndjson"};
  });
}

int cmd_eval(const CommandOptions& o, std::ostream& err) {
  return guarded(o, err, [&] {
    if (o.model_path.empty()) throw Error("--model is required for 'eval'");
    const auto model = load_model(o.model_path);
    check_model_schema(model, o.config);
    const auto test = load_split(o, Split::kTest);
    const auto& cfg = o.config;
    const double baseline = all_features_cost(test, cfg.schema);
    const auto report = evaluate(model, test, cfg.schema, cfg.objective, baseline, cfg.eval.cost_units_per_ms);
    {
      auto out = open_out(out_path(o, "eval.txt"));
      write_eval_report(out, report);
      auto rec = open_out(out_path(o, "eval_records.ndjson"));
      write_query_records(rec, report.queries);
    }
    std::vector<std::string> outputs{"eval.txt", "eval_records.ndjson"};
    if (!o.compare) return outputs;

    CommandOptions train_opts = o;
    train_opts.split = Split::kTrain;
    const auto train_data = load_split(train_opts, Split::kTrain);
    const double cupms = cfg.eval.cost_units_per_ms;
    std::vector<std::size_t> all(cfg.schema.feature_dim());
    for (std::size_t k = 0; k < all.size(); ++k) all[k] = k;
    struct Row {
      std::string name;
      EvalReport report;
    };
    std::vector<Row> rows;
    rows.push_back({"single-all", baseline_single_stage(train_data, test, cfg.schema, all, cfg.objective, cfg.train, cupms).report});
    rows.push_back({"single-cheap", baseline_single_stage(train_data, test, cfg.schema, indices_of(cfg.schema, cfg.eval.cheap_features),
                                                          cfg.objective, cfg.train, cupms).report});
    rows.push_back({"two-stage", baseline_two_stage(train_data, test, cfg.schema, cfg.schema.index_of(cfg.eval.filter_feature),
                                                    cfg.eval.keep_k, cfg.objective, cfg.train, cupms).report});
    rows.push_back({"soft-cascade", baseline_soft_cascade(train_data, test, cfg.schema, cfg.assignment(), cfg.objective,
                                                          cfg.train, cupms).report});
    rows.push_back({"CLOES", report});
    auto out = open_out(out_path(o, "compare.txt"));
    out << "method\tauc\tcost_ratio\tfraction_below_floor\tfraction_above_latency_ceiling\n";
    for (const auto& r : rows) {
      out << r.name << '\t' << json(r.report.auc).dump() << '\t' << json(r.report.expected_cost_ratio).dump() << '\t'
          << json(r.report.fraction_below_floor).dump() << '\t' << json(r.report.fraction_above_ceiling).dump() << '\n';
    }
    outputs.push_back("compare.txt");
    return outputs;
  });
}

int cmd_simulate(const CommandOptions& o, std::ostream& err) {
  return guarded(o, err, [&] {
    if (o.model_path.empty()) throw Error("--model is required for 'simulate'");
    const auto model = load_model(o.model_path);
    check_model_schema(model, o.config);
    const auto data = load_split(o, Split::kAll);
    SimOptions sim;
    sim.traffic_multiplier = o.config.simulate.traffic_multiplier;
    sim.stochastic = o.config.simulate.stochastic;
    sim.seed = o.config.simulate.seed;
    sim.cost_units_per_ms = o.config.eval.cost_units_per_ms;
    const auto report = simulate(model, data, o.config.schema, o.config.objective, sim);
    auto out = open_out(out_path(o, "sim.txt"));
    write_sim_summary(out, report);
    auto rec = open_out(out_path(o, "sim_records.ndjson"));
    write_sim_records(rec, report.queries);
    return std::vector<std::string>{"sim.txt", "sim_records.ndjson"};
  });
}

int cmd_gradcheck(const CommandOptions& o, std::ostream& err) {
  bool failed = false;
  const int code = guarded(o, err, [&] {
    const auto& cfg = o.config;
    std::vector<QueryGroup> data;
    if (o.dataset_path.empty()) {
      // 10 queries x 20 items, half of them head queries so the latency term matters.
      GenConfig gen = cfg.datagen;
      gen.n_queries = 10;
      gen.sampled_range = {20, 20};
      gen.sample_fraction = 0.0;
      gen.head_fraction = 0.5;
      data = generate(gen, cfg.schema);
    } else {
      data = load_split(o, Split::kAll);
    }
    const auto model = init_weights(cfg.assignment(), cfg.schema.feature_dim(), cfg.schema.query_feature_dim(),
                                    cfg.train.seed, o.init_scale);
    GradientCheckOptions opts;
    opts.step = o.step;
    opts.tolerance = o.tolerance;
    opts.corrupt_gradient = o.corrupt_gradient;
    const auto costs = stage_costs(model.assignment(), cfg.schema);
    const auto report = gradient_check(model, data, costs, cfg.objective, cfg.train.objective, opts);
    auto out = open_out(out_path(o, "gradcheck.txt"));
    out << "objective = " << to_string(cfg.train.objective) << '\n'
        << "instances = " << count_instances(data) << '\n'
        << "checked = " << report.checked << '\n'
        << "max_relative_error = " << json(report.max_relative_error).dump() << '\n'
        << "tolerance = " << json(o.tolerance).dump() << '\n'
        << "passed = " << (report.passed ? "true" : "false") << '\n';
    failed = !report.passed;
    if (failed) {
      err << "cloes gradcheck: max relative error " << report.max_relative_error << " exceeds tolerance "
          << o.tolerance << " on " << report.failing.size() << " coordinates\n";
    }
    return std::vector<std::string>{"gradcheck.txt"};
  });
  return code != 0 ? code : (failed ? 1 : 0);
}

int cmd_replay(const std::string& manifest_path, const std::string& out_dir, std::ostream& err) {
  CommandOptions o;
  try {
    std::ifstream in(manifest_path);
    if (!in) throw Error("cannot open manifest '" + manifest_path + "'");
    o = options_from_manifest(json::parse(in));
  } catch (const std::exception& e) {
    err << "cloes replay: error: " << e.what() << '\n';
    return 1;
  }
  o.out_dir = out_dir;
  if (o.command == "datagen") return cmd_datagen(o, err);
  if (o.command == "train") return cmd_train(o, err);
  if (o.command == "eval") return cmd_eval(o, err);
  if (o.command == "simulate") return cmd_simulate(o, err);
  if (o.command == "gradcheck") return cmd_gradcheck(o, err);
  err << "cloes replay: error: manifest names unknown command '" << o.command << "'\n";
  return 1;
}

int run_cli(const std::vector<std::string>& args, std::ostream& err) {
  CLI::App app{"Cost-aware cascade ranking: data generation, training, evaluation and serving replay", "cloes"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);

  CommandOptions o;
  std::string split;
  std::optional<std::string> objective;
  std::optional<double> alpha, beta, gamma, delta, latency, purchase_weight, price_weight, floor, ceiling, lr, traffic;
  std::optional<int> epochs, batch_size;
  std::optional<std::uint64_t> seed;
  bool stochastic = false;
  std::string manifest;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON config file")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out_dir, "output directory");
    sub->add_option("--seed", seed, "seed of this command's randomness");
  };
  auto data_opt = [&](CLI::App* sub) {
    sub->add_option("--dataset", o.dataset_path, "dataset file")->check(CLI::ExistingFile);
    sub->add_option("--split", split, "dataset part to use")->check(CLI::IsMember({"all", "train", "test"}));
  };
  auto objective_opts = [&](CLI::App* sub) {
    sub->add_option("--objective", objective, "l1, l2 or l3")->check(CLI::IsMember({"l1", "l2", "l3"}));
    sub->add_option("--alpha", alpha, "L2 regularization weight");
    sub->add_option("--beta", beta, "expected-cost weight");
    sub->add_option("--gamma", gamma, "softplus sharpness");
    sub->add_option("--delta", delta, "result-floor penalty weight");
    sub->add_option("--latency-penalty", latency, "latency penalty weight");
    sub->add_option("--purchase-weight", purchase_weight, "purchase importance factor");
    sub->add_option("--price-weight", price_weight, "price importance factor");
    sub->add_option("--result-floor", floor, "minimum final result count N_o");
    sub->add_option("--latency-ceiling", ceiling, "latency ceiling T_l in cost units");
  };

  auto* datagen_cmd = app.add_subcommand("datagen", "generate a synthetic dataset");
  common(datagen_cmd);

  auto* train_cmd = app.add_subcommand("train", "train a cascade");
  common(train_cmd);
  data_opt(train_cmd);
  train_cmd->get_option("--dataset")->required();
  objective_opts(train_cmd);
  train_cmd->add_option("--lr", lr, "learning rate");
  train_cmd->add_option("--epochs", epochs, "training epochs");
  train_cmd->add_option("--batch-size", batch_size, "query groups per step");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a model");
  common(eval_cmd);
  data_opt(eval_cmd);
  eval_cmd->get_option("--dataset")->required();
  eval_cmd->add_option("--model", o.model_path, "model file")->required()->check(CLI::ExistingFile);
  objective_opts(eval_cmd);
  eval_cmd->add_option("--lr", lr, "learning rate for --compare baselines");
  eval_cmd->add_option("--epochs", epochs, "epochs for --compare baselines");
  eval_cmd->add_option("--batch-size", batch_size, "batch size for --compare baselines");
  eval_cmd->add_flag("--compare", o.compare, "also train and evaluate the baselines");

  auto* sim_cmd = app.add_subcommand("simulate", "replay queries through hard cascade filtering");
  common(sim_cmd);
  data_opt(sim_cmd);
  sim_cmd->get_option("--dataset")->required();
  sim_cmd->add_option("--model", o.model_path, "model file")->required()->check(CLI::ExistingFile);
  objective_opts(sim_cmd);
  sim_cmd->add_option("--traffic", traffic, "traffic multiplier");
  sim_cmd->add_flag("--stochastic", stochastic, "Bernoulli pass filtering instead of top-k");

  auto* grad_cmd = app.add_subcommand("gradcheck", "compare analytic and finite-difference gradients");
  common(grad_cmd);
  data_opt(grad_cmd);
  objective_opts(grad_cmd);
  grad_cmd->add_option("--tolerance", o.tolerance, "maximum relative error");
  grad_cmd->add_option("--step", o.step, "finite-difference step");
  grad_cmd->add_option("--init-scale", o.init_scale, "random weight range");
  grad_cmd->add_option("--corrupt-gradient", o.corrupt_gradient, "test hook: offset added to analytic partials")
      ->group("");

  auto* replay_cmd = app.add_subcommand("replay", "re-run a command from its manifest");
  replay_cmd->add_option("--manifest", manifest, "manifest.json of the run")->required()->check(CLI::ExistingFile);
  replay_cmd->add_option("--out", o.out_dir, "output directory")->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, std::cout, err) == 0 ? 0 : 2;
  }

  auto* chosen = app.get_subcommands().front();
  o.command = chosen->get_name();
  if (o.command == "replay") return cmd_replay(manifest, o.out_dir, err);

  if (traffic && !(*traffic > 0.0)) {
    err << "cloes simulate: usage error: --traffic must be > 0\n";
    return 2;
  }
  try {
    o.config = o.config_path.empty() ? Config{} : load_config(o.config_path);
    auto& c = o.config;
    if (!split.empty()) o.split = split_from_string(split);
    if (objective) c.train.objective = objective_from_string(*objective);
    if (alpha) c.objective.alpha = *alpha;
    if (beta) c.objective.beta = *beta;
    if (gamma) c.objective.gamma = *gamma;
    if (delta) c.objective.delta = *delta;
    if (latency) c.objective.latency_penalty_weight = *latency;
    if (purchase_weight) c.objective.purchase_weight = *purchase_weight;
    if (price_weight) c.objective.price_weight = *price_weight;
    if (floor) c.objective.result_floor = *floor;
    if (ceiling) c.objective.latency_ceiling = *ceiling;
    if (lr) c.train.learning_rate = *lr;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (traffic) c.simulate.traffic_multiplier = *traffic;
    if (stochastic) c.simulate.stochastic = true;
    if (seed) {
      if (o.command == "datagen") c.datagen.seed = *seed;
      else if (o.command == "simulate") c.simulate.seed = *seed;
      else c.train.seed = *seed;
    }
  } catch (const std::exception& e) {
    err << "cloes " << o.command << ": error: " << e.what() << '\n';
    return 2;
  }

  if (o.command == "datagen") return cmd_datagen(o, err);
  if (o.command == "train") return cmd_train(o, err);
  if (o.command == "eval") return cmd_eval(o, err);
  if (o.command == "simulate") return cmd_simulate(o, err);
  return cmd_gradcheck(o, err);
}

}  // namespace cloes
