#include <doctest.h>

#include <filesystem>
#include <iostream>
#include <sstream>

#include "lmmtc/cli.hpp"
#include "lmmtc/data.hpp"
#include "lmmtc/io.hpp"
#include "support.hpp"

using namespace lmmtc;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Captured {
  int code;
  std::string out;
};

Captured run(const std::vector<std::string>& args) {
  std::ostringstream buf;
  auto* old = std::cout.rdbuf(buf.rdbuf());
  const int code = cli::dispatch(args);
  std::cout.rdbuf(old);
  return {code, buf.str()};
}

// A workspace with a small corpus and tiny configs, shared by the cases below.
struct Workspace {
  std::string root;
  std::string data;
  std::string tc;
  std::string mc;

  Workspace() {
    root = testing::scratch_dir("cli");
    data = root + "/data";
    tc = root + "/train_config.json";
    mc = root + "/model_config.json";
    io::write_json(tc, {{"epochs", 2}, {"batch_size", 8}, {"learning_rate", 3e-3}, {"log_every_batches", 5}});
    io::write_json(mc, {{"d_model", 16}, {"n_heads", 2}, {"n_layers", 1}, {"d_ffn", 16}, {"max_len", 64}});
  }

  void ensure_data() {
    if (fs::exists(data + "/train.jsonl")) return;
    REQUIRE(run({"gen-data", "--out", data, "--n-train", "48", "--n-test", "16"}).code == 0);
  }
};

Workspace& ws() {
  static Workspace w;
  return w;
}

json manifest_of(const std::string& dir) { return io::read_json(dir + "/run_manifest.json"); }

}  // namespace

TEST_CASE("usage errors exit with 2") {
  CHECK(run({"no-such-command"}).code == 2);
  CHECK(run({"train", "--lamda", "0.05"}).code == 2);
  CHECK(run({"train", "--data", "x", "--out", "y", "--lamda", "0.05"}).code == 2);
  CHECK(run({"metrics"}).code == 2);
  CHECK(run({"--help"}).code == 0);
  CHECK(run({"train", "--help"}).code == 0);
}

TEST_CASE("domain errors exit with 1") {
  auto& w = ws();
  CHECK(run({"eval", "--model", w.root + "/missing-run", "--data", w.root + "/missing-data"}).code == 1);
  const auto bad = w.root + "/bad_genspec.json";
  io::write_json(bad, {{"n_labels", 0}});
  CHECK(run({"gen-data", "--genspec", bad, "--out", w.root + "/bad-gen"}).code == 1);
  const auto typo = w.root + "/typo_config.json";
  io::write_json(typo, {{"lamda", 0.05}});
  w.ensure_data();
  CHECK(run({"train", "--data", w.data, "--train-config", typo, "--out", w.root + "/typo-run"}).code == 1);
}

TEST_CASE("gen-data writes a reproducible corpus") {
  auto& w = ws();
  w.ensure_data();
  for (const char* f : {"train.jsonl", "test.jsonl", "labels.json", "genspec.json", "run_manifest.json"}) {
    CHECK(fs::exists(w.data + "/" + f));
  }
  const auto again = w.root + "/data-again";
  REQUIRE(run({"gen-data", "--out", again, "--n-train", "48", "--n-test", "16"}).code == 0);
  CHECK(io::read_file(again + "/train.jsonl") == io::read_file(w.data + "/train.jsonl"));
  CHECK(manifest_of(again).at("artifacts") == manifest_of(w.data).at("artifacts"));

  const auto other = w.root + "/data-seed7";
  REQUIRE(run({"--seed", "7", "gen-data", "--out", other, "--n-train", "48", "--n-test", "16"}).code == 0);
  CHECK(io::read_file(other + "/train.jsonl") != io::read_file(w.data + "/train.jsonl"));
  CHECK(manifest_of(other).at("seed") == 7);
}

TEST_CASE("train, eval, predict and metrics") {
  auto& w = ws();
  w.ensure_data();
  const auto run_dir = w.root + "/run";
  const auto t = run({"train", "--data", w.data, "--labels", w.data + "/labels.json", "--train-config", w.tc,
                      "--model-config", w.mc, "--out", run_dir});
  REQUIRE(t.code == 0);
  for (const char* f : {"checkpoint.bin", "best.bin", "history.jsonl", "report.json", "vocab.json", "labels.json",
                        "train_config.json", "model_config.json", "run_manifest.json"}) {
    CHECK(fs::exists(run_dir + "/" + f));
  }
  const auto report = io::read_json(run_dir + "/report.json");
  CHECK(json::parse(t.out) == report);
  const auto m = manifest_of(run_dir);
  CHECK(m.at("command") == "train");
  CHECK(m.at("tool_version") == cli::kToolVersion);
  CHECK(m.at("artifacts").at("checkpoint.bin").at("fnv1a64") == io::fnv1a_hex(io::read_file(run_dir + "/checkpoint.bin")));
  CHECK(m.at("config_paths").size() >= 2);

  // Flags override the config file.
  CHECK(io::read_json(run_dir + "/train_config.json").at("epochs") == 2);
  const auto flagged = w.root + "/run-flagged";
  REQUIRE(run({"train", "--data", w.data, "--train-config", w.tc, "--model-config", w.mc, "--epochs", "1",
               "--out", flagged}).code == 0);
  CHECK(io::read_json(flagged + "/train_config.json").at("epochs") == 1);

  // Same seed, same bytes.
  const auto rerun = w.root + "/run-again";
  REQUIRE(run({"train", "--data", w.data, "--train-config", w.tc, "--model-config", w.mc, "--out", rerun}).code == 0);
  CHECK(io::read_file(rerun + "/checkpoint.bin") == io::read_file(run_dir + "/checkpoint.bin"));
  CHECK(io::read_file(rerun + "/history.jsonl") == io::read_file(run_dir + "/history.jsonl"));

  // The output directory may not be the input directory.
  CHECK(run({"train", "--data", w.data, "--train-config", w.tc, "--model-config", w.mc, "--out", w.data}).code == 1);

  const auto eval_dir = w.root + "/eval";
  const auto e = run({"eval", "--model", run_dir, "--data", w.data, "--out", eval_dir});
  REQUIRE(e.code == 0);
  CHECK(io::read_json(eval_dir + "/report.json") == report);
  CHECK(fs::exists(eval_dir + "/predictions.jsonl"));
  CHECK(fs::exists(eval_dir + "/run_manifest.json"));

  const auto met = run({"metrics", "--pred", eval_dir + "/predictions.jsonl", "--gold", w.data + "/test.jsonl",
                        "--labels", w.data + "/labels.json"});
  REQUIRE(met.code == 0);
  CHECK(json::parse(met.out) == report);

  const auto p = run({"predict", "--model", run_dir, "--text", "t0w1 t0w2 n3", "--text", "n1 n2"});
  REQUIRE(p.code == 0);
  std::istringstream lines(p.out);
  int n = 0;
  for (std::string line; std::getline(lines, line);) {
    const auto j = json::parse(line);
    CHECK(j.at("proba").size() == 12);
    ++n;
  }
  CHECK(n == 2);

  const auto an = w.root + "/attn";
  REQUIRE(run({"analyze", "attention", "--model", run_dir, "--data", w.data, "--max-examples", "5", "--out", an}).code == 0);
  CHECK(fs::exists(an + "/attention_layer0.csv"));
  CHECK(fs::exists(an + "/attention_layer0.svg"));
}

TEST_CASE("correlation analysis") {
  auto& w = ws();
  w.ensure_data();
  const auto out = w.root + "/corr";
  const auto r = run({"analyze", "correlation", "--data", w.data, "--method", "both", "--top-k", "4", "--out", out});
  REQUIRE(r.code == 0);
  for (const char* f : {"correlation_pearson.csv", "correlation_pearson.svg", "correlation_spearman.csv",
                        "correlation_spearman.svg", "run_manifest.json"}) {
    CHECK(fs::exists(out + "/" + f));
  }
  CHECK(run({"analyze", "correlation", "--data", w.data, "--method", "kendall", "--out", out + "2"}).code == 2);
}

TEST_CASE("compare-strategies is reproducible") {
  auto& w = ws();
  w.ensure_data();
  const auto a = w.root + "/cmp-a";
  const auto b = w.root + "/cmp-b";
  const std::vector<std::string> base = {"compare-strategies", "--data", w.data, "--train-config", w.tc,
                                         "--model-config", w.mc, "--epochs", "1"};
  auto args_a = base;
  args_a.insert(args_a.end(), {"--out", a});
  auto args_b = base;
  args_b.insert(args_b.end(), {"--out", b});
  REQUIRE(run(args_a).code == 0);
  REQUIRE(run(args_b).code == 0);
  const auto ja = io::read_file(a + "/comparison.json");
  CHECK(ja == io::read_file(b + "/comparison.json"));
  const auto c = json::parse(ja);
  CHECK(c.contains("diff"));
  CHECK(c.contains("same"));
  CHECK(c.at("delta").at("micro_f1").get<double>() ==
        c.at("diff").at("micro_f1").get<double>() - c.at("same").at("micro_f1").get<double>());
}

TEST_CASE("pretrain then warm-start training") {
  auto& w = ws();
  w.ensure_data();
  const auto pre = w.root + "/pre";
  REQUIRE(run({"pretrain", "--data", w.data, "--train-config", w.tc, "--model-config", w.mc, "--epochs", "1",
               "--out", pre}).code == 0);
  CHECK(fs::exists(pre + "/checkpoint.bin"));
  const auto warm = w.root + "/warm";
  CHECK(run({"train", "--data", w.data, "--train-config", w.tc, "--model-config", w.mc, "--epochs", "1",
             "--init", pre, "--out", warm}).code == 0);
}
