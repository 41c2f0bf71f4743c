#include <doctest.h>

#include <fstream>
#include <sstream>

#include <fmt/core.h>

#include "oracles.hpp"
#include "qrkit/cli.hpp"
#include "qrkit/errors.hpp"
#include "qrkit/head_score.hpp"
#include "qrkit/io_util.hpp"
#include "toy.hpp"

using namespace qrkit;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> with_toy(std::vector<std::string> args, const fs::path& out) {
  const std::vector<std::string> extra{"--tokenizer", (toy::kData / "tokenizer.json").string(), "--synthetic-plan",
                                       (toy::kData / "plan.json").string(), "--out", out.string()};
  args.insert(args.end(), extra.begin(), extra.end());
  return args;
}

nlohmann::json read_json(const fs::path& p) { return nlohmann::json::parse(read_file(p)); }

const std::vector<std::string> kGrid = {"--needle", toy::kNeedle, "--question", toy::kQuestion,
                                        "--lengths", "64,128", "--depths", "0,1"};

std::vector<std::string> grid_args(std::string cmd, std::vector<std::string> extra = {}) {
  std::vector<std::string> a{std::move(cmd)};
  a.insert(a.end(), kGrid.begin(), kGrid.end());
  a.insert(a.end(), extra.begin(), extra.end());
  return a;
}

}  // namespace

TEST_CASE("config layering: flags over env over file over defaults") {
  const auto file = parse_config_text("# comment\ntop_k_heads = 8\nnull_query = none\nseed = 3\n");
  const auto env = env_overrides([](const std::string& name) -> std::optional<std::string> {
    if (name == "QRKIT_SEED") return "5";
    if (name == "QRKIT_CALIBRATION") return "false";
    return std::nullopt;
  });
  const KeyValues flags{{"seed", "9"}};
  const auto c = resolve_config({file, env, flags});
  CHECK(c.top_k_heads == 8);
  CHECK(c.null_query == "none");
  CHECK(c.seed == 9);
  CHECK_FALSE(c.calibration);
  const auto defaults = resolve_config({});
  CHECK(defaults.top_k_heads == 16);
  CHECK(defaults.calibration);
  CHECK(defaults.null_query == "N/A");
  CHECK(RunConfig::from_json(c.to_json()).to_json() == c.to_json());
}

TEST_CASE("config file errors carry line numbers") {
  try {
    parse_config_text("seed = 1\nbogus = 2\n", "my.conf");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("my.conf:2") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config_text("seed\n"), ParseError);
  CHECK_THROWS_AS(resolve_config({{{"top_k_heads", "x"}}}), ArgumentError);
}

TEST_CASE("exactly one model source") {
  RunConfig c;
  CHECK_THROWS_AS(c.require_source(), ArgumentError);
  c.model = "m";
  c.synthetic_plan = "p";
  CHECK_THROWS_AS(c.require_source(), ArgumentError);
  c.model.reset();
  CHECK_NOTHROW(c.require_source());
}

TEST_CASE("detect-heads feeds rerank, ablate and eval unmodified") {
  const auto dir = oracle::temp_dir("pipeline");
  auto r = run(with_toy({"detect-heads", "--dataset", (toy::kData / "detect.jsonl").string(), "--top-k-heads", "3"},
                        dir / "detect"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto set = headset_from_json(read_json(dir / "detect" / "headset.json"));
  CHECK(set.heads == toy::plan().planted_heads);
  const auto table = read_json(dir / "detect" / "head_scores.json");
  CHECK(table.at("dataset") == "detect");
  CHECK(table.at("n_examples") == 16);
  CHECK(table.contains("config_hash"));

  r = run(with_toy({"rerank", "--headset", (dir / "detect" / "headset.json").string(), "--dataset",
                    (toy::kData / "queries.jsonl").string(), "--k", "1,3", "--emit-context", "k=3"},
                   dir / "rerank"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto recall = read_json(dir / "rerank" / "recall.json");
  CHECK(recall.at("mean").at("recall@1") == 1.0);
  CHECK(fs::exists(dir / "rerank" / "contexts" / "0.txt"));
  CHECK(read_json(dir / "rerank" / "contexts" / "7.json").at("passages").size() == 3);
  const auto first = nlohmann::json::parse(split(read_file(dir / "rerank" / "rankings.jsonl"), '\n')[0]);
  CHECK(first.at("ranking")[0].contains("baseline"));
  CHECK(first.at("query_id") == "niah-0");

  r = run({"eval", "--rankings", (dir / "rerank" / "rankings.jsonl").string(), "--qrels",
           (toy::kData / "qrels.tsv").string(), "--metrics", "recall@5,ndcg@10", "--out", (dir / "eval").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto report = read_json(dir / "eval" / "report.json");
  CHECK(report.at("mean").at("recall@5") == 1.0);
  CHECK(report.at("mean").at("ndcg@10") == 1.0);
  CHECK(fs::exists(dir / "eval" / "report.txt"));

  r = run(with_toy(grid_args("ablate", {"--headset", (dir / "detect" / "headset.json").string()}), dir / "ablate"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_file(dir / "ablate" / "niah_grid.csv") == "context_length,0,1\n64,0,0\n128,0,0\n");
  CHECK(read_json(dir / "ablate" / "niah_grid.json").at("mask").size() == 3);
}

TEST_CASE("rerank without calibration omits baselines") {
  const auto dir = oracle::temp_dir("nocal");
  fs::path headset = dir / "headset.json";
  write_file_atomic(headset, R"({"n_layers":4,"n_heads":4,"k":1,"heads":[{"layer":1,"head":3,"score":1}]})");
  const auto r = run(with_toy({"rerank", "--headset", headset.string(), "--dataset",
                               (toy::kData / "queries.jsonl").string(), "--no-calibration"},
                              dir / "out"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_file(dir / "out" / "rankings.jsonl").find("baseline") == std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out" / "contexts"));
}

TEST_CASE("head set shape must match the model") {
  const auto dir = oracle::temp_dir("shape");
  fs::path headset = dir / "headset.json";
  write_file_atomic(headset, R"({"n_layers":2,"n_heads":4,"k":1,"heads":[{"layer":1,"head":3,"score":1}]})");
  const auto r = run(with_toy({"rerank", "--headset", headset.string(), "--dataset",
                               (toy::kData / "queries.jsonl").string()},
                              dir / "out"));
  CHECK(r.code == 1);
  CHECK(r.err.find("error") != std::string::npos);
}

TEST_CASE("copy_paste needs answers") {
  const auto dir = oracle::temp_dir("noanswer");
  const fs::path ds = dir / "plain.jsonl";
  write_file_atomic(ds, R"({"query":"what is the magic number","docs":[{"id":"a","text":"river stone"}],"gold_ids":["a"]})"
                        "\n");
  const auto r = run(with_toy({"detect-heads", "--dataset", ds.string(), "--metric", "copy_paste"}, dir / "out"));
  CHECK(r.code == 1);
  CHECK(r.err.find("answer") != std::string::npos);
}

TEST_CASE("dataset errors name the line") {
  const auto dir = oracle::temp_dir("badline");
  const fs::path ds = dir / "bad.jsonl";
  write_file_atomic(ds, "{\"query\":\"q\",\"docs\":[{\"id\":\"a\",\"text\":\"x\"}],\"gold_ids\":[\"a\"]}\n{oops\n");
  const auto r = run(with_toy({"detect-heads", "--dataset", ds.string()}, dir / "out"));
  CHECK(r.code == 1);
  CHECK(r.err.find(":2") != std::string::npos);
}

TEST_CASE("random ablation masks are reproducible and avoid the head set") {
  const auto dir = oracle::temp_dir("random");
  fs::path headset = dir / "headset.json";
  write_file_atomic(headset, R"({"n_layers":4,"n_heads":4,"k":3,"heads":[{"layer":1,"head":3},{"layer":2,"head":0},{"layer":3,"head":2}]})");
  const auto a = run(with_toy(grid_args("ablate", {"--headset", headset.string(), "--random", "3", "--seed", "1"}), dir / "a"));
  const auto b = run(with_toy(grid_args("ablate", {"--headset", headset.string(), "--random", "3", "--seed", "1"}), dir / "b"));
  REQUIRE_MESSAGE(a.code == 0, a.err);
  REQUIRE(b.code == 0);
  const auto ma = read_json(dir / "a" / "niah_grid.json").at("mask");
  CHECK(ma == read_json(dir / "b" / "niah_grid.json").at("mask"));
  CHECK(ma.size() == 3);
  for (const auto& h : ma) CHECK_FALSE(HeadMask(toy::plan().planted_heads).contains({h.at("layer"), h.at("head")}));
  CHECK(read_file(dir / "a" / "niah_grid.csv") == "context_length,0,1\n64,1,1\n128,1,1\n");

  const auto none = run(with_toy(grid_args("ablate"), dir / "none"));
  REQUIRE(none.code == 0);
  CHECK(read_json(dir / "none" / "niah_grid.json").at("mask").empty());
  CHECK(run(with_toy(grid_args("ablate", {"--random", "17"}), dir / "toomany")).code == 1);
}

TEST_CASE("eval join errors") {
  const auto dir = oracle::temp_dir("join");
  write_file_atomic(dir / "r.jsonl", R"({"query":"x","query_id":"zz","ranking":[{"id":"a","raw":1,"final":1}]})"
                                     "\n");
  const auto r = run({"eval", "--rankings", (dir / "r.jsonl").string(), "--qrels", (toy::kData / "qrels.tsv").string(),
                      "--out", (dir / "out").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("match") != std::string::npos);
}

TEST_CASE("replay reproduces outputs byte for byte") {
  const auto dir = oracle::temp_dir("replay");
  auto r = run(with_toy(grid_args("niah", {"--trials", "2", "--jobs", "3"}), dir / "first"));
  REQUIRE_MESSAGE(r.code == 0, r.err);
  r = run({"replay", (dir / "first" / "manifest.json").string(), "--out", (dir / "second").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  for (const char* f : {"niah_grid.csv", "niah_grid.json", "manifest.json"})
    CHECK(read_file(dir / "first" / f) == read_file(dir / "second" / f));

  auto m = read_json(dir / "first" / "manifest.json");
  m["options"]["trials"] = 5;
  write_file_atomic(dir / "tampered.json", m.dump());
  CHECK(run({"replay", (dir / "tampered.json").string(), "--out", (dir / "third").string()}).code == 1);
}

TEST_CASE("config file drives a command") {
  const auto dir = oracle::temp_dir("conffile");
  write_file_atomic(dir / "run.conf", fmt::format("tokenizer = {}\nsynthetic_plan = {}\ntop_k_heads = 2\nout = {}\n",
                                                  (toy::kData / "tokenizer.json").string(),
                                                  (toy::kData / "plan.json").string(), (dir / "out").string()));
  const auto r = run({"detect-heads", "--config", (dir / "run.conf").string(), "--dataset",
                      (toy::kData / "detect.jsonl").string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(read_json(dir / "out" / "headset.json").at("k") == 2);
  CHECK(read_json(dir / "out" / "manifest.json").at("config").at("top_k_heads") == 2);
}

TEST_CASE("usage errors") {
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"rerank", "--headset", "x"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}
