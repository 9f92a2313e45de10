// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "cloes/cascade.hpp"
#include "cloes/config.hpp"
#include "cloes/datagen.hpp"
#include "cloes/evaluator.hpp"
#include "cloes/objective.hpp"
#include "cloes/simulator.hpp"
#include "cloes/trainer.hpp"

namespace fs = std::filesystem;
using namespace cloes;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

const fs::path kWork = "acceptance_work";

// Benchmark runs use a longer, hotter schedule than the library defaults.
Config bench_config() {
  Config cfg;
  cfg.train.learning_rate = 1.0;
  cfg.train.lr_decay = 0.97;
  cfg.train.epochs = 100;
  return cfg;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + CLOES_CLI_PATH + "\" " + args + " 2>>" + (kWork / "cli.log").string();
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> out;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

struct Benchmark {
  std::vector<QueryGroup> train, test;
};

Benchmark make_benchmark(const GenConfig& gen, const Config& cfg) {
  auto data = generate(gen, cfg.schema);
  auto [tr, te] = split_groups(data, cfg.eval.test_fraction, cfg.eval.split_seed);
  return {std::move(tr), std::move(te)};
}

EvalReport train_and_eval(const Benchmark& b, const Config& cfg, Objective obj, const ObjectiveConfig& o) {
  auto t = cfg.train;
  t.objective = obj;
  auto m = train(b.train, cfg.schema, cfg.assignment(), o, t);
  return evaluate(m.model, b.test, cfg.schema, o, all_features_cost(b.test, cfg.schema), cfg.eval.cost_units_per_ms);
}

// 1. Analytic gradient versus central differences through the CLI.
Outcome gradient_correctness() {
  const auto dir = kWork / "gradcheck";
  const auto start = std::chrono::steady_clock::now();
  const int rc = run_cli("gradcheck --objective l3 --gamma 10 --step 1e-5 --tolerance 1e-4 --out " + dir.string());
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  auto kv = read_kv(dir / "gradcheck.txt");
  if (kv.empty()) return {false, fmt("no gradcheck.txt (exit %d)", rc)};
  const double err = std::stod(kv["max_relative_error"]);
  const bool ok = rc == 0 && err < 1e-4 && kv["instances"] == "200" && secs < 10.0;
  return {ok, fmt("instances=%s checked=%s max_rel_err=%.3g (< 1e-4) time=%.2fs (< 10s)", kv["instances"].c_str(),
                  kv["checked"].c_str(), err, secs)};
}

// 2. Softplus penalty sits between the hinge and the hinge plus ln2/gamma.
Outcome softplus_bound() {
  const double theta = 200.0;
  const int n = 10000;
  const double step = 100.0 / (n - 1);
  bool ok = true;
  std::string detail;
  for (double g : {1.0, 10.0, 100.0}) {
    double max_gap = -1.0, argmax = 0.0, min_gap = 1e300;
    for (int i = 0; i < n; ++i) {
      const double z = theta - 50.0 + step * i;
      const double gap = softplus_penalty(z, theta, g) - std::max(0.0, theta - z);
      min_gap = std::min(min_gap, gap);
      if (gap > max_gap) max_gap = gap, argmax = z;
    }
    const double bound = std::log(2.0) / g + 1e-12;
    const bool here = min_gap >= 0.0 && max_gap <= bound && std::abs(argmax - theta) <= step;
    ok = ok && here;
    detail += fmt("g=%g max_gap=%.6g bound=%.6g |argmax-theta|=%.3g; ", g, max_gap, bound, std::abs(argmax - theta));
  }
  return {ok, detail};
}

// 3. A one-stage cascade with no extra terms is logistic regression.
Outcome single_stage_equivalence() {
  const auto schema = default_schema();
  const std::size_t d = schema.feature_dim(), qd = schema.query_feature_dim();
  std::mt19937_64 rng(2024);
  std::normal_distribution<double> normal;
  std::vector<double> truth(d);
  for (auto& w : truth) w = normal(rng);
  const std::int64_t recalled[] = {5, 50, 500, 5000, 50000};
  std::vector<QueryGroup> data;
  for (int q = 0; q < 5; ++q) {
    QueryGroup g;
    g.query_id = "q" + std::to_string(q);
    g.recalled_count = recalled[q];
    g.query_features = schema.query_one_hot(g.recalled_count);
    for (int i = 0; i < 10; ++i) {
      Instance inst;
      double z = 0.3 * (q - 2);
      for (std::size_t k = 0; k < d; ++k) {
        inst.item_features.push_back(normal(rng));
        z += truth[k] * inst.item_features.back();
      }
      inst.label = std::bernoulli_distribution(1.0 / (1.0 + std::exp(-z)))(rng) ? Behavior::kClick : Behavior::kNone;
      g.instances.push_back(inst);
    }
    data.push_back(std::move(g));
  }

  // Newton's method on the design [f | g(q)].
  std::vector<std::vector<double>> x;
  std::vector<double> y;
  for (const auto& g : data) {
    for (const auto& inst : g.instances) {
      auto row = inst.item_features;
      row.insert(row.end(), g.query_features.begin(), g.query_features.end());
      x.push_back(row);
      y.push_back(inst.positive() ? 1.0 : 0.0);
    }
  }
  const std::size_t p = d + qd;
  std::vector<double> w(p, 0.0);
  auto nll_of = [&](const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = std::inner_product(v.begin(), v.end(), x[i].begin(), 0.0);
      s += std::log1p(std::exp(-std::abs(z))) + std::max(z, 0.0) - y[i] * z;
    }
    return s;
  };
  for (int it = 0; it < 100; ++it) {
    std::vector<double> grad(p, 0.0);
    std::vector<std::vector<double>> h(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = std::inner_product(w.begin(), w.end(), x[i].begin(), 0.0);
      const double mu = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t a = 0; a < p; ++a) {
        grad[a] += (mu - y[i]) * x[i][a];
        for (std::size_t b = 0; b < p; ++b) h[a][b] += mu * (1 - mu) * x[i][a] * x[i][b];
      }
    }
    // Query bins with no data give zero rows; a tiny ridge keeps the system solvable.
    for (std::size_t a = 0; a < p; ++a) h[a][a] += 1e-12;
    std::vector<double> step = grad;
    for (std::size_t c = 0; c < p; ++c) {
      std::size_t piv = c;
      for (std::size_t r = c + 1; r < p; ++r)
        if (std::abs(h[r][c]) > std::abs(h[piv][c])) piv = r;
      std::swap(h[c], h[piv]);
      std::swap(step[c], step[piv]);
      for (std::size_t r = 0; r < p; ++r) {
        if (r == c) continue;
        const double f = h[r][c] / h[c][c];
        for (std::size_t k = c; k < p; ++k) h[r][k] -= f * h[c][k];
        step[r] -= f * step[c];
      }
    }
    for (std::size_t a = 0; a < p; ++a) w[a] -= step[a] / h[a][a];
  }
  const double oracle = nll_of(w);

  std::vector<std::size_t> all(d);
  std::iota(all.begin(), all.end(), std::size_t{0});
  ObjectiveConfig o;
  o.alpha = 0.0;
  TrainConfig t;
  t.objective = Objective::kL1;
  t.batch_size = static_cast<int>(data.size());
  t.learning_rate = 2.0;
  t.lr_decay = 1.0;
  t.epochs = 20000;
  t.init_scale = 0.0;
  auto m = train(data, schema, StageAssignment({all}), o, t);
  const double got = weighted_nll(m.model, data, o);
  const double gap = got - oracle;
  return {std::abs(gap) <= 1e-6, fmt("trained_nll=%.10f newton_nll=%.10f diff=%.3g (<= 1e-6)", got, oracle, gap)};
}

// 4. Closed-form expected counts and latency against Bernoulli sampling.
Outcome expected_count_consistency() {
  const auto schema = default_schema();
  const auto assignment = default_assignment(schema);
  const auto model = init_weights(assignment, schema.feature_dim(), schema.query_feature_dim(), 5, 1.0);
  GenConfig gen;
  gen.n_queries = 1;
  gen.seed = 3;
  gen.head_fraction = 1.0;
  gen.sampled_range = {20, 20};
  auto group = generate(gen, schema).front();
  const auto probs = score_group(model, group);
  const auto costs = stage_costs(assignment, schema);
  const std::size_t stages = model.num_stages();
  const double scale = static_cast<double>(group.recalled_count) / static_cast<double>(group.instances.size());

  const int trials = 10000;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> sum(stages + 1, 0.0), sum2(stages + 1, 0.0);
  for (int t = 0; t < trials; ++t) {
    std::vector<double> count(stages, 0.0);
    for (const auto& p : probs) {
      for (std::size_t j = 0; j < stages; ++j) {
        if (u(rng) >= p.per_stage[j]) break;
        count[j] += 1.0;
      }
    }
    double latency = costs[0] * static_cast<double>(group.recalled_count);
    for (std::size_t j = 0; j < stages; ++j) {
      const double c = scale * count[j];
      sum[j] += c, sum2[j] += c * c;
      if (j + 1 < stages) latency += costs[j + 1] * c;
    }
    sum[stages] += latency, sum2[stages] += latency * latency;
  }
  bool ok = true;
  std::string detail;
  for (std::size_t j = 0; j <= stages; ++j) {
    const double mean = sum[j] / trials;
    const double se = std::sqrt(std::max(0.0, sum2[j] / trials - mean * mean) / trials);
    const double expected = j < stages ? expected_count(model, group, j + 1) : expected_latency(model, group, costs);
    const double z = std::abs(mean - expected) / se;
    ok = ok && z <= 3.0;
    detail += fmt("%s: exp=%.4f mc=%.4f z=%.2f; ", j < stages ? ("count" + std::to_string(j + 1)).c_str() : "latency",
                  expected, mean, z);
  }
  return {ok, detail};
}

// 5. Accuracy/cost ordering of the compared methods.
Outcome tradeoff_directionality() {
  const auto start = std::chrono::steady_clock::now();
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Config cfg = bench_config();
    cfg.datagen.seed = seed;
    cfg.train.seed = seed;
    const auto b = make_benchmark(cfg.datagen, cfg);
    const auto& s = cfg.schema;
    const auto all = [&] {
      std::vector<std::size_t> v(s.feature_dim());
      std::iota(v.begin(), v.end(), std::size_t{0});
      return v;
    }();
    std::vector<std::size_t> cheap;
    for (const auto& n : cfg.eval.cheap_features) cheap.push_back(s.index_of(n));
    const auto single = baseline_single_stage(b.train, b.test, s, all, cfg.objective, cfg.train).report;
    const auto cheap_r = baseline_single_stage(b.train, b.test, s, cheap, cfg.objective, cfg.train).report;
    const auto two = baseline_two_stage(b.train, b.test, s, s.index_of(cfg.eval.filter_feature), cfg.eval.keep_k,
                                        cfg.objective, cfg.train)
                         .report;
    const auto soft = baseline_soft_cascade(b.train, b.test, s, cfg.assignment(), cfg.objective, cfg.train).report;
    auto o1 = cfg.objective;
    o1.beta = 1.0;
    auto o10 = cfg.objective;
    o10.beta = 10.0;
    const auto c1 = train_and_eval(b, cfg, Objective::kL2, o1);
    const auto c10 = train_and_eval(b, cfg, Objective::kL2, o10);

    const std::vector<double> others{cheap_r.auc, two.auc, soft.auc, c1.auc, c10.auc};
    const bool a = single.expected_cost_ratio == 1.0 && single.auc > *std::max_element(others.begin(), others.end());
    const bool bb = cheap_r.expected_cost_ratio < 0.15 &&
                    cheap_r.auc < std::min({single.auc, two.auc, soft.auc, c1.auc, c10.auc});
    const bool c = c1.auc > two.auc && c1.expected_cost_ratio <= two.expected_cost_ratio &&
                   c10.expected_cost_ratio <= 0.75 * c1.expected_cost_ratio && c1.auc - c10.auc <= 0.05;
    ok = ok && a && bb && c;
    detail += fmt(
        "seed %llu [%c%c%c] all %.4f/%.17g cheap %.4f/%.4f two %.4f/%.4f soft %.4f/%.4f cloes1 %.4f/%.4f "
        "cloes10 %.4f/%.4f; ",
        static_cast<unsigned long long>(seed), a ? 'a' : '-', bb ? 'b' : '-', c ? 'c' : '-', single.auc,
        single.expected_cost_ratio, cheap_r.auc, cheap_r.expected_cost_ratio, two.auc, two.expected_cost_ratio,
        soft.auc, soft.expected_cost_ratio, c1.auc, c1.expected_cost_ratio, c10.auc, c10.expected_cost_ratio);
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  ok = ok && secs < 300.0;
  detail += fmt("time=%.1fs (< 300s)", secs);
  return {ok, detail};
}

// 6. The result-floor penalty lifts tail queries above N_o.
Outcome result_floor_effect() {
  Config cfg = bench_config();
  GenConfig gen = cfg.datagen;
  gen.head_fraction = 0.0;
  gen.tail_mcount_range = {2500, 8000};
  const auto b = make_benchmark(gen, cfg);
  auto o = cfg.objective;
  o.beta = 0.0;
  o.latency_penalty_weight = 0.0;
  o.delta = 0.0;
  const auto off = train_and_eval(b, cfg, Objective::kL3, o);
  o.delta = 1.0;
  const auto on = train_and_eval(b, cfg, Objective::kL3, o);
  const double rel = off.fraction_below_floor > 0.0 ? 1.0 - on.fraction_below_floor / off.fraction_below_floor : 0.0;
  const double dauc = on.auc - off.auc;
  return {rel >= 0.30 && dauc >= -0.02,
          fmt("below_floor %.3f -> %.3f (reduction %.1f%% >= 30%%) mean_count %.1f -> %.1f auc %.4f -> %.4f "
              "(change %+.4f >= -0.02)",
              off.fraction_below_floor, on.fraction_below_floor, 100.0 * rel, off.mean_final_count,
              on.mean_final_count, off.auc, on.auc, dauc)};
}

// 7. The latency penalty pulls head queries under T_l.
Outcome latency_penalty_effect() {
  Config cfg = bench_config();
  const auto b = make_benchmark(cfg.datagen, cfg);
  auto o = cfg.objective;
  o.delta = 0.0;
  o.latency_penalty_weight = 0.0;
  const auto off = train_and_eval(b, cfg, Objective::kL3, o);
  o.latency_penalty_weight = 0.05;
  const auto on = train_and_eval(b, cfg, Objective::kL3, o);
  const auto head_above = [&](const EvalReport& r) {
    double n = 0, above = 0;
    for (const auto& q : r.queries) {
      if (q.recalled < cfg.datagen.head_mcount_range.first) continue;
      n += 1;
      above += q.above_ceiling;
    }
    return above / n;
  };
  const double a0 = head_above(off), a1 = head_above(on);
  const double rel = a0 > 0.0 ? 1.0 - a1 / a0 : 0.0;
  return {rel >= 0.30, fmt("head above ceiling %.3f -> %.3f (reduction %.1f%% >= 30%%) mean latency %.1f -> %.1f", a0,
                           a1, 100.0 * rel, off.mean_latency, on.mean_latency)};
}

double top10_price(const CascadeModel& m, std::span<const QueryGroup> groups) {
  double total = 0.0;
  for (const auto& g : groups) {
    const auto p = score_group(m, g);
    std::vector<std::size_t> idx(p.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return p[a].final > p[b].final; });
    double num = 0.0, den = 0.0;
    for (std::size_t r = 0; r < std::min<std::size_t>(10, idx.size()); ++r) {
      const double w = 1.0 / std::log2(static_cast<double>(r) + 2.0);
      num += w * g.instances[idx[r]].price;
      den += w;
    }
    total += num / den;
  }
  return total / static_cast<double>(groups.size());
}

// 8. A larger price weight moves pricier items up the ranking.
Outcome importance_weight_directionality() {
  bool ok = true;
  std::string detail;
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    Config cfg = bench_config();
    cfg.datagen.seed = seed;
    cfg.train.seed = seed;
    cfg.train.objective = Objective::kL2;
    cfg.datagen.purchase_price_slope = 3.0;
    cfg.datagen.features[cfg.schema.index_of("Deep & Wide")].price_loading = 0.2;
    const auto b = make_benchmark(cfg.datagen, cfg);
    auto o = cfg.objective;
    o.beta = 5.0;
    o.use_importance_weights = true;
    o.purchase_weight = 10.0;
    double prev = -1.0;
    detail += fmt("seed %llu:", static_cast<unsigned long long>(seed));
    for (double mu : {1.0, 2.0, 3.0}) {
      o.price_weight = mu;
      const auto m = train(b.train, cfg.schema, cfg.assignment(), o, cfg.train);
      const double price = top10_price(m.model, b.test);
      ok = ok && price >= prev;
      prev = price;
      detail += fmt(" mu=%g %.3f", mu, price);
    }
    detail += "; ";
  }
  return {ok, detail};
}

// 9. Serving the cost-heavy model costs less than the fixed two-stage plan.
Outcome simulator_cost_saving() {
  Config cfg = bench_config();
  const auto b = make_benchmark(cfg.datagen, cfg);
  GenConfig sg = cfg.datagen;
  sg.sample_fraction = 1.0;
  sg.n_queries = 200;
  sg.seed = 99;
  const auto traffic = generate(sg, cfg.schema);
  const auto two = baseline_two_stage(b.train, b.test, cfg.schema, cfg.schema.index_of(cfg.eval.filter_feature),
                                      cfg.eval.keep_k, cfg.objective, cfg.train);
  auto o = cfg.objective;
  o.beta = 10.0;
  const auto m = train(b.train, cfg.schema, cfg.assignment(), o, cfg.train);
  const auto r2 = simulate_two_stage(two, traffic, cfg.schema, o);
  const auto rc = simulate(m.model, traffic, cfg.schema, o);
  const double saving = 1.0 - rc.total_cost / r2.total_cost;
  return {saving >= 0.20, fmt("total cost two-stage %.1f cloes %.1f (saving %.1f%% >= 20%%) mean results %.1f vs %.1f",
                              r2.total_cost, rc.total_cost, 100.0 * saving, r2.mean_final_count, rc.mean_final_count)};
}

// 10. Each command rerun from its manifest reproduces its outputs byte for byte.
Outcome determinism() {
  const auto dir = kWork / "replay";
  fs::create_directories(dir);
  const auto cfg_path = dir / "small.json";
  {
    std::ofstream out(cfg_path);
    out << R"({"datagen": {"n_queries": 120, "seed": 5}, "train": {"epochs": 8}})" << '\n';
  }
  const std::string c = " --config " + cfg_path.string();
  const auto d = [&](const char* name) { return (dir / name).string(); };
  struct Step {
    std::string name, args;
    std::vector<std::string> files;
  };
  const std::vector<Step> steps{
      {"datagen", "datagen" + c + " --out " + d("datagen"), {"dataset.txt"}},
      {"train", "train" + c + " --dataset " + d("datagen") + "/dataset.txt --out " + d("train"), {"model.txt"}},
      {"eval",
       "eval" + c + " --dataset " + d("datagen") + "/dataset.txt --model " + d("train") + "/model.txt --compare --out " +
           d("eval"),
       {"eval.txt", "eval_records.ndjson", "compare.txt"}},
      {"simulate",
       "simulate" + c + " --stochastic --dataset " + d("datagen") + "/dataset.txt --model " + d("train") +
           "/model.txt --out " + d("simulate"),
       {"sim.txt", "sim_records.ndjson"}},
      {"gradcheck", "gradcheck" + c + " --out " + d("gradcheck"), {"gradcheck.txt"}},
  };
  bool ok = true;
  std::string detail;
  for (const auto& s : steps) {
    bool same = run_cli(s.args) == 0;
    const auto again = dir / (s.name + "_replay");
    same = same && run_cli("replay --manifest " + (dir / s.name / "manifest.json").string() + " --out " +
                           again.string()) == 0;
    for (const auto& f : s.files) {
      const auto a = slurp(dir / s.name / f);
      same = same && !a.empty() && a == slurp(again / f);
    }
    ok = ok && same;
    detail += s.name + (same ? " identical; " : " DIFFERS; ");
  }
  return {ok, detail};
}

}  // namespace

int main() {
  fs::remove_all(kWork);
  fs::create_directories(kWork);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"softplus-hinge bound", softplus_bound},
      {"single-stage equivalence", single_stage_equivalence},
      {"expected-count consistency", expected_count_consistency},
      {"trade-off directionality", tradeoff_directionality},
      {"result-floor penalty effect", result_floor_effect},
      {"latency penalty effect", latency_penalty_effect},
      {"importance-weight directionality", importance_weight_directionality},
      {"simulator cost saving", simulator_cost_saving},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome r;
    try {
      r = criteria[i].second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    failed += !r.pass;
    std::printf("%s %zu %s: %s\n", r.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), r.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
