#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <unistd.h>

#include "cloes/commands.hpp"
#include "cloes/config.hpp"
#include "json.hpp"

using namespace cloes;
namespace fs = std::filesystem;

namespace {

fs::path scratch() {
  static const fs::path root = [] {
    auto p = fs::temp_directory_path() / ("cloes_cmd_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
  }();
  return root;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Run {
  int code = 0;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream err;
  const int code = run_cli(args, err);
  return {code, err.str()};
}

std::string write_config(const std::string& name, const std::string& text) {
  const auto p = scratch() / name;
  std::ofstream(p) << text;
  return p.string();
}

std::map<std::string, std::string> read_kv(const fs::path& p) {
  std::map<std::string, std::string> out;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
  }
  return out;
}

// A small dataset and a short-trained model shared by the later cases.
struct Fixture {
  std::string config, data, model;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    Fixture x;
    x.config = write_config("small.json", R"({"datagen": {"n_queries": 120, "seed": 4}, "train": {"epochs": 5}})");
    const auto dir = (scratch() / "fixture").string();
    REQUIRE(cli({"datagen", "--config", x.config, "--out", dir}).code == 0);
    x.data = dir + "/dataset.txt";
    REQUIRE(cli({"train", "--config", x.config, "--dataset", x.data, "--out", dir}).code == 0);
    x.model = dir + "/model.txt";
    return x;
  }();
  return f;
}

}  // namespace

TEST_CASE("datagen is byte-identical for the same seed and writes a manifest") {
  const auto cfg = write_config("dg.json", R"({"datagen": {"n_queries": 30}})");
  const auto a = (scratch() / "dg_a").string(), b = (scratch() / "dg_b").string(), c = (scratch() / "dg_c").string();
  REQUIRE(cli({"datagen", "--config", cfg, "--seed", "3", "--out", a}).code == 0);
  REQUIRE(cli({"datagen", "--config", cfg, "--seed", "3", "--out", b}).code == 0);
  REQUIRE(cli({"datagen", "--config", cfg, "--seed", "4", "--out", c}).code == 0);
  CHECK(slurp(a + "/dataset.txt") == slurp(b + "/dataset.txt"));
  CHECK(slurp(a + "/dataset.txt") != slurp(c + "/dataset.txt"));

  const auto m = nlohmann::json::parse(slurp(a + "/manifest.json"));
  CHECK(m["command"] == "datagen");
  CHECK(m["seed"] == 3);
  CHECK(m["version"] == kToolVersion);
  CHECK(m["config"]["datagen"]["n_queries"] == 30);
  REQUIRE(m["outputs"].size() == 1);
  CHECK(fs::exists(m["outputs"][0].get<std::string>()));
}

TEST_CASE("invalid configs fail and name the field") {
  const auto bad = write_config("bad.json", R"({"datagen": {"positives_ratio": 1.5}})");
  const auto r = cli({"datagen", "--config", bad, "--out", (scratch() / "bad").string()});
  CHECK(r.code != 0);
  CHECK(r.err.find("positives_ratio") != std::string::npos);

  const auto unknown = write_config("unknown.json", R"({"objective": {"betta": 1}})");
  const auto u = cli({"datagen", "--config", unknown, "--out", (scratch() / "bad").string()});
  CHECK(u.code == 2);
  CHECK(u.err.find("objective.betta") != std::string::npos);

  const auto neg = cli({"train", "--dataset", fixture().data, "--epochs", "0", "--out", (scratch() / "bad").string()});
  CHECK(neg.code != 0);
  CHECK(neg.err.find("epochs") != std::string::npos);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(cli({}).code == 2);
  CHECK(cli({"frobnicate"}).code == 2);
  CHECK(cli({"train"}).code == 2);  // dataset missing
  CHECK(cli({"train", "--dataset", "/nonexistent/d.txt"}).code == 2);
  CHECK(cli({"eval", "--dataset", fixture().data}).code == 2);  // model missing
  CHECK(cli({"train", "--dataset", fixture().data, "--objective", "l4"}).code == 2);
  const auto t = cli({"simulate", "--dataset", fixture().data, "--model", fixture().model, "--traffic", "0"});
  CHECK(t.code == 2);
  CHECK(t.err.find("traffic") != std::string::npos);
  CHECK(cli({"--version"}).code == 0);
}

TEST_CASE("the installed binary reports the same exit codes") {
  const std::string bin = CLOES_CLI_PATH;
  const auto quiet = " >/dev/null 2>&1";
  auto status = [](int raw) { return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1; };
  CHECK(status(std::system((bin + " --version" + quiet).c_str())) == 0);
  CHECK(status(std::system((bin + " train" + quiet).c_str())) == 2);
}

TEST_CASE("eval writes a report and the comparison table") {
  const auto& f = fixture();
  const auto dir = (scratch() / "eval").string();
  REQUIRE(cli({"eval", "--config", f.config, "--dataset", f.data, "--model", f.model, "--compare", "--out", dir}).code ==
          0);
  const auto kv = read_kv(dir + "/eval.txt");
  const double auc = std::stod(kv.at("auc"));
  CHECK(auc >= 0.0);
  CHECK(auc <= 1.0);
  CHECK(std::stod(kv.at("expected_cost_ratio")) > 0.0);

  std::istringstream table(slurp(dir + "/compare.txt"));
  std::string line;
  std::getline(table, line);
  CHECK(line.rfind("method\tauc\tcost_ratio", 0) == 0);
  std::vector<std::string> names;
  while (std::getline(table, line)) {
    std::istringstream cells(line);
    std::string name, a, ratio;
    std::getline(cells, name, '\t');
    std::getline(cells, a, '\t');
    std::getline(cells, ratio, '\t');
    names.push_back(name);
    CHECK(std::stod(a) >= 0.0);
    CHECK(std::stod(a) <= 1.0);
    if (name == "single-all") CHECK(std::stod(ratio) == 1.0);
  }
  CHECK(names == std::vector<std::string>{"single-all", "single-cheap", "two-stage", "soft-cascade", "CLOES"});
  CHECK(fs::exists(dir + "/eval_records.ndjson"));
  CHECK(fs::exists(dir + "/manifest.json"));
}

TEST_CASE("simulate traffic scales utilization") {
  const auto& f = fixture();
  const auto one = (scratch() / "sim1").string(), three = (scratch() / "sim3").string();
  REQUIRE(cli({"simulate", "--config", f.config, "--dataset", f.data, "--model", f.model, "--out", one}).code == 0);
  REQUIRE(cli({"simulate", "--config", f.config, "--dataset", f.data, "--model", f.model, "--traffic", "3", "--out",
               three})
              .code == 0);
  const auto a = read_kv(one + "/sim.txt"), b = read_kv(three + "/sim.txt");
  CHECK(std::stod(b.at("utilization")) == doctest::Approx(3 * std::stod(a.at("utilization"))));
  CHECK(a.at("mean_latency_units") == b.at("mean_latency_units"));
  CHECK(a.at("p95_latency_ms") == b.at("p95_latency_ms"));
}

TEST_CASE("gradcheck passes and fails on a corrupted gradient") {
  const auto ok = (scratch() / "gc").string();
  REQUIRE(cli({"gradcheck", "--objective", "l3", "--out", ok}).code == 0);
  const auto kv = read_kv(ok + "/gradcheck.txt");
  CHECK(kv.at("passed") == "true");
  CHECK(kv.at("instances") == "200");
  const auto bad = cli({"gradcheck", "--corrupt-gradient", "0.1", "--out", (scratch() / "gc_bad").string()});
  CHECK(bad.code == 1);
  CHECK(bad.err.find("exceeds tolerance") != std::string::npos);
}

TEST_CASE("--objective l1 trains the soft cascade") {
  const auto& f = fixture();
  const auto l1 = (scratch() / "l1").string(), soft = (scratch() / "soft").string();
  REQUIRE(cli({"train", "--config", f.config, "--dataset", f.data, "--objective", "l1", "--out", l1}).code == 0);
  const auto zero = write_config("zero.json", R"({"datagen": {"n_queries": 120, "seed": 4}, "train": {"epochs": 5},
      "objective": {"beta": 0, "delta": 0, "latency_penalty_weight": 0}})");
  REQUIRE(cli({"train", "--config", zero, "--dataset", f.data, "--objective", "l3", "--out", soft}).code == 0);
  CHECK(slurp(l1 + "/model.txt") == slurp(soft + "/model.txt"));
}

TEST_CASE("replay reproduces a run from its manifest") {
  const auto& f = fixture();
  const auto dir = (scratch() / "sim_stoch").string(), again = (scratch() / "sim_stoch_again").string();
  REQUIRE(cli({"simulate", "--config", f.config, "--dataset", f.data, "--model", f.model, "--stochastic", "--seed", "8",
               "--out", dir})
              .code == 0);
  REQUIRE(cli({"replay", "--manifest", dir + "/manifest.json", "--out", again}).code == 0);
  CHECK(slurp(dir + "/sim_records.ndjson") == slurp(again + "/sim_records.ndjson"));
  CHECK(slurp(dir + "/sim.txt") == slurp(again + "/sim.txt"));

  const auto garbage = write_config("garbage_manifest.json", R"({"command": "train"})");
  CHECK(cli({"replay", "--manifest", garbage, "--out", again}).code == 1);
}

TEST_CASE("options survive the manifest round trip") {
  CommandOptions o;
  o.command = "gradcheck";
  o.tolerance = 3e-3;
  o.corrupt_gradient = 0.25;
  o.split = Split::kTest;
  o.config.objective.beta = 7.5;
  const auto back = options_from_manifest(options_to_json(o));
  CHECK(back.command == "gradcheck");
  CHECK(back.tolerance == 3e-3);
  CHECK(back.corrupt_gradient == 0.25);
  CHECK(back.split == Split::kTest);
  CHECK(back.config.objective.beta == 7.5);
  CHECK(config_to_json(back.config) == config_to_json(o.config));
}
