// Acceptance suite: one line per criterion, exit status 1 if any fails.

#include <bit>
#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "oracles.hpp"
#include "qrkit/cli.hpp"
#include "qrkit/head_score.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/metrics.hpp"
#include "qrkit/retriever.hpp"
#include "qrkit/rng.hpp"
#include "qrkit/weights_io.hpp"
#include "toy.hpp"

using namespace qrkit;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

AttentionTensor random_tensor(std::size_t L, std::size_t H, std::size_t n, Rng& rng) {
  AttentionTensor t(L, H, n);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t q = 0; q < n; ++q) {
        auto row = t.row(l, h, q);
        std::vector<double> w(row.size());
        double z = 0.0;
        for (auto& x : w) z += (x = -std::log(1.0 - rng.uniform()));
        for (std::size_t k = 0; k < row.size(); ++k) row[k] = static_cast<float>(w[k] / z);
      }
  return t;
}

// Random byte-level layout with at most 64 tokens.
PromptLayout random_layout(Rng& rng) {
  const auto spec = TokenizerSpec::byte_level();
  for (;;) {
    std::vector<Passage> docs;
    const auto n_docs = 1 + rng.below(5);
    for (std::size_t i = 0; i < n_docs; ++i)
      docs.push_back({fmt::format("d{}", i), std::string(1 + rng.below(12), static_cast<char>('a' + i))});
    auto layout = build_prompt(spec, docs, std::string(1 + rng.below(8), 'q'));
    if (layout.tokens.size() <= 64) return layout;
  }
}

HeadSet heads_of(std::size_t L, std::size_t H, std::vector<HeadId> heads) {
  HeadSet s;
  s.n_layers = L;
  s.n_heads = H;
  s.heads = std::move(heads);
  return s;
}

// ---------------------------------------------------------------------------

Outcome criterion_1() {
  Rng rng(2024);
  double worst = 0.0;
  for (int c = 0; c < 100; ++c) {
    const auto layout = random_layout(rng);
    const std::size_t L = 1 + rng.below(4), H = 1 + rng.below(4);
    const auto attn = random_tensor(L, H, layout.tokens.size(), rng);
    std::vector<std::string> gold;
    for (const auto& d : layout.doc_spans)
      if (rng.below(2) || gold.empty()) gold.push_back(d.id);
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t h = 0; h < H; ++h) {
        double want_query = 0.0;
        for (const auto& d : layout.doc_spans) {
          const double want = oracle::qrscore_doc(attn, l, h, layout.query_span, d.span);
          worst = std::max(worst, std::abs(qrscore_doc(attn, layout, {l, h}, d.id) - want));
        }
        for (const auto& g : gold) want_query += oracle::qrscore_doc(attn, l, h, layout.query_span, layout.doc_span(g));
        worst = std::max(worst, std::abs(qrscore_query(attn, layout, {l, h}, gold) - want_query));
      }
  }
  return {worst <= 1e-9, fmt::format("max abs error {:.3g}", worst)};
}

Outcome criterion_2() {
  Rng rng(77);
  int exact = 0;
  for (int c = 0; c < 100; ++c) {
    const auto layout = random_layout(rng);
    const auto attn = random_tensor(2, 2, layout.tokens.size(), rng);
    std::vector<std::string> gold;
    for (const auto& d : layout.doc_spans)
      if (rng.below(2) || gold.empty()) gold.push_back(d.id);
    rng.shuffle(gold);
    const HeadId head{rng.below(2), rng.below(2)};
    double sum = 0.0;
    for (const auto& g : gold) sum += qrscore_doc(attn, layout, head, g);
    if (std::bit_cast<std::uint64_t>(sum) == std::bit_cast<std::uint64_t>(qrscore_query(attn, layout, head, gold))) ++exact;
  }
  return {exact == 100, fmt::format("{}/100 bitwise equal", exact)};
}

Outcome criterion_3() {
  const auto spec = toy::tokenizer();
  int hits = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto plan = toy::plan();
    plan.noise_seed = seed;
    plan.mu = 0.9;
    SyntheticProvider p(plan, spec);
    const auto table = qrscore_dataset(p, spec, toy::niah_dataset(spec, 100 + seed, 16));
    const auto set = rank_and_select(table, 3);
    const std::set<HeadId> got(set.heads.begin(), set.heads.end());
    const std::set<HeadId> want(plan.planted_heads.begin(), plan.planted_heads.end());
    if (got == want) ++hits;
  }
  return {hits == 5, fmt::format("planted set recovered for {}/5 seeds", hits)};
}

Outcome criterion_4() {
  const auto spec = toy::tokenizer();
  const auto plan = toy::plan();
  SyntheticProvider p(plan, spec);
  const NiahGrid grid{{64, 128, 192, 256}, {0.0, 0.33, 0.67, 1.0}, 2};
  const auto task = toy::task(spec, 9);

  std::vector<HeadId> others;
  const HeadMask planted(plan.planted_heads);
  for (std::size_t l = 0; l < 4; ++l)
    for (std::size_t h = 0; h < 4; ++h)
      if (!planted.contains({l, h})) others.push_back({l, h});
  Rng rng(31);
  rng.shuffle(others);
  others.resize(3);

  const double open = run_niah_grid(p, spec, task, grid, {}, 4).mean();
  const double random_masked = run_niah_grid(p, spec, task, grid, HeadMask(others), 4).mean();
  const double planted_masked = run_niah_grid(p, spec, task, grid, planted, 4).mean();
  const double chance = niah_chance_level(spec);
  const bool ok = open == 1.0 && random_masked == 1.0 && planted_masked <= chance + 0.05;
  return {ok, fmt::format("unmasked {:.2f}, 3 random masked {:.2f}, planted masked {:.2f} (chance {:.3f})", open,
                          random_masked, planted_masked, chance)};
}

// Examples whose documents all have distinct lengths, so no two passages tie.
std::vector<DetectionExample> distinct_length_examples(const TokenizerSpec& spec) {
  const auto pool = word_salad_pool(spec, words_of({toy::kNeedle, toy::kQuestion, "N/A"}), 64, 25, 25, 5);
  std::vector<DetectionExample> out;
  Rng rng(8);
  for (std::size_t i = 0; i < 16; ++i) {
    std::vector<std::size_t> lengths{4 + i % 3, 8, 13, 19, 22};
    rng.shuffle(lengths);
    DetectionExample ex;
    ex.query = toy::kQuestion;
    ex.answer = toy::kNeedle;
    const std::size_t gold = i % lengths.size();
    for (std::size_t d = 0; d < lengths.size(); ++d) {
      std::istringstream words(pool[(i * 5 + d) % pool.size()].text);
      std::string text, w;
      for (std::size_t k = 0; k < lengths[d] && words >> w; ++k) text += (text.empty() ? "" : " ") + w;
      if (d == gold) text += " " + toy::kNeedle;
      ex.docs.push_back({fmt::format("p{}", d), text});
    }
    ex.gold_ids = {ex.docs[gold].id};
    out.push_back(std::move(ex));
  }
  return out;
}

Outcome criterion_5() {
  const auto spec = toy::tokenizer();
  const auto plan = toy::plan();
  SyntheticProvider p(plan, spec);
  const auto headset = heads_of(4, 4, plan.planted_heads);
  int first = 0;
  for (const auto& ex : toy::niah_dataset(spec, 55, 16).examples) {
    if (score_passages(p, spec, headset, ex.query, ex.docs).entries.front().passage_id == ex.gold_ids[0]) ++first;
  }

  BiasInjectingProvider biased(p, spec, {4.0, 1.0, 2.5, 0.5, 3.0}, 0.5);
  int identical = 0, changed_uncalibrated = 0;
  const auto examples = distinct_length_examples(spec);
  for (const auto& ex : examples) {
    const auto clean = score_passages(p, spec, headset, ex.query, ex.docs);
    const auto dirty = score_passages(biased, spec, headset, ex.query, ex.docs);
    if (clean.ids() == dirty.ids()) ++identical;
    const CalibrationConfig off{false, "N/A"};
    if (score_passages(p, spec, headset, ex.query, ex.docs, off).ids() !=
        score_passages(biased, spec, headset, ex.query, ex.docs, off).ids())
      ++changed_uncalibrated;
  }
  const bool ok = first >= 15 && identical == static_cast<int>(examples.size());
  return {ok, fmt::format("gold first {}/16; calibrated rankings identical under bias {}/{} "
                          "(bias alters {} uncalibrated rankings)",
                          first, identical, examples.size(), changed_uncalibrated)};
}

Outcome criterion_6() {
  const auto spec = toy::tokenizer();
  const auto dir = oracle::temp_dir("accept-copy");
  save_weights_binary(craft_copy_weights(spec, toy::kNeedle, 512, 3), dir / "copy.qrkw");
  RealTransformer m(load_weights(dir / "copy.qrkw"));
  const auto result = copy_paste_score(m, spec, toy::niah_dataset(spec, 66, 8));
  const double copy_head = result.table.score({0, 0});
  const double random_head = result.table.score({0, 1});

  // 2 of 4 answer tokens copied
  const std::vector<TokenId> prompt{0, 10, 11, 12, 13, 2};
  DecodeTrace decode{1, 1, {10, 11, 12, 13}, {}};
  const std::size_t argmax_at[] = {1, 2, 5, 0};
  for (std::size_t s = 0; s < 4; ++s) {
    DecodeStep st{decode.generated[s], prompt.size() + s, {}};
    st.attention.assign(st.prefix_len, 0.0f);
    st.attention[argmax_at[s]] = 1.0f;
    decode.steps.push_back(st);
  }
  const std::vector<std::size_t> needle{1, 2, 3, 4};
  const double spot = trace_copies(decode, prompt, needle).head_scores[0];
  const bool ok = copy_head == 1.0 && random_head <= 0.25 && copy_fraction(2, 4) == 0.5 && spot == 0.5;
  return {ok, fmt::format("copy head {:.3f}, random head {:.3f}, 2-of-4 spot check {}", copy_head, random_head, spot)};
}

Outcome criterion_7() {
  using Ids = std::vector<std::string>;
  const Judgment two{"q", {{"d2", 1}, {"d7", 1}}};
  const Judgment one{"q", {{"a", 1}}};
  const Judgment pair{"q", {{"a", 1}, {"b", 1}}};
  struct Case {
    double got, want;
  };
  const Case cases[] = {
      {recall_at_k(Ids{"d7", "d1", "d2", "d3"}, two, 2), 0.5},
      {recall_at_k(Ids{"d7", "d1", "d2", "d3"}, two, 4), 1.0},
      {recall_at_k(Ids{"a", "b"}, one, 1), 1.0},
      {ndcg_at_k(Ids{"a", "b", "c"}, one, 10), 1.0},
      {ndcg_at_k(Ids{"b", "a", "c"}, one, 10), 1.0 / std::log2(3.0)},
      {ndcg_at_k(Ids{"a", "b", "c"}, pair, 10), 1.0},
  };
  int ok = 0;
  for (const auto& c : cases) ok += std::abs(c.got - c.want) <= 1e-9;
  return {ok == 6, fmt::format("{}/6 fixtures within 1e-9 (rank-2 nDCG {:.4f})", ok, cases[4].got)};
}

Outcome criterion_8() {
  HeadScoreTable table;
  table.n_layers = 32;
  table.n_heads = 32;
  Rng rng(3);
  for (int i = 0; i < 1024; ++i) table.scores.push_back(rng.uniform());
  const auto top32 = rank_and_select(table, 32);
  const auto top64 = rank_and_select(table, 64);
  const auto top16 = rank_and_select(table, 16);
  auto rev = table;
  for (auto& s : rev.scores) s = -s;
  const auto bottom32 = rank_and_select(rev, 32);
  const double pct = 100.0 * top32.fraction_of_total();
  const auto same = headset_overlap(top32, top32), disjoint = headset_overlap(top32, bottom32),
             nested = headset_overlap(top16, top64);
  const bool ok = pct == 3.125 && same == 32 && disjoint == 0 && nested == 16;
  return {ok, fmt::format("32 of 1024 heads = {}%; overlaps {{{}, {}, {}}}", pct, same, disjoint, nested)};
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  return files;
}

Outcome criterion_9() {
  const auto dir = oracle::temp_dir("accept-cli");
  const std::string d = toy::kData.string();
  const std::vector<std::string> synth{"--tokenizer", d + "/tokenizer.json", "--synthetic-plan", d + "/plan.json"};
  const std::vector<std::string> copy{"--tokenizer", d + "/tokenizer.json", "--model", d + "/copy_model.qrkw"};
  const std::vector<std::string> grid{"--needle", toy::kNeedle, "--question", toy::kQuestion, "--lengths",
                                      "64,128,192,256", "--trials", "2"};
  auto cat = [](std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  };
  const std::string hs = (dir / "detect" / "headset.json").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> runs{
      {"detect", cat({"detect-heads", "--dataset", d + "/detect.jsonl", "--top-k-heads", "3", "--jobs", "4"}, synth)},
      {"rerank", cat({"rerank", "--headset", hs, "--dataset", d + "/queries.jsonl", "--emit-context", "k=3"}, synth)},
      {"eval", {"eval", "--rankings", (dir / "rerank" / "rankings.jsonl").string(), "--qrels", d + "/qrels.tsv"}},
      {"ablate", cat(cat({"ablate", "--headset", hs}, synth), grid)},
      {"ablate-random", cat(cat({"ablate", "--headset", hs, "--random", "3", "--seed", "1"}, synth), grid)},
      {"niah", cat(cat({"niah", "--jobs", "4"}, copy), grid)},
      {"copy", cat({"detect-heads", "--dataset", d + "/detect.jsonl", "--metric", "copy_paste"}, copy)},
      {"gen", {"gen-niah", "--tokenizer", d + "/tokenizer.json", "--needle", toy::kNeedle, "--question",
               toy::kQuestion, "--n", "8", "--seed", "4"}},
      {"craft", {"craft-copy-model", "--tokenizer", d + "/tokenizer.json", "--needle", toy::kNeedle}},
  };
  std::string failures;
  double pipeline_recall = -1.0;
  for (const auto& [name, args] : runs) {
    auto full = args;
    full.push_back("--out");
    full.push_back((dir / name).string());
    std::ostringstream out, err;
    if (run_cli(full, out, err) != 0) {
      failures += fmt::format(" {} failed: {}", name, err.str());
      continue;
    }
    const fs::path again = dir / (name + "-replay");
    if (run_cli({"replay", (dir / name / "manifest.json").string(), "--out", again.string()}, out, err) != 0) {
      failures += fmt::format(" {} replay failed: {}", name, err.str());
      continue;
    }
    if (snapshot(dir / name) != snapshot(again)) failures += " " + name + " replay differs";
  }
  if (fs::exists(dir / "eval" / "report.json"))
    pipeline_recall = nlohmann::json::parse(read_file(dir / "eval" / "report.json")).at("mean").at("recall@5");
  const bool ok = failures.empty() && pipeline_recall == 1.0;
  return {ok, failures.empty() ? fmt::format("{} commands replayed byte-identically; pipeline recall@5 {}",
                                             runs.size(), pipeline_recall)
                               : failures};
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    const char* name;
    double budget_s;  // 0 = untimed
    std::function<Outcome()> run;
  };
  const Criterion criteria[] = {
      {1, "qrscore oracle equivalence", 5.0, criterion_1},
      {2, "query score decomposes over gold documents", 0.0, criterion_2},
      {3, "planted-head detection", 10.0, criterion_3},
      {4, "masking asymmetry on the NIAH grid", 30.0, criterion_4},
      {5, "retriever correctness and calibration", 0.0, criterion_5},
      {6, "copy-paste score", 0.0, criterion_6},
      {7, "metric fixtures", 0.0, criterion_7},
      {8, "head-count arithmetic and overlap", 0.0, criterion_8},
      {9, "CLI determinism and end-to-end pipeline", 120.0, criterion_9},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    bool pass = o.pass;
    if (c.budget_s > 0 && secs >= c.budget_s) {
      pass = false;
      o.detail += fmt::format("; over the {:.0f} s budget", c.budget_s);
    }
    failed += !pass;
    std::cout << fmt::format("[{}] {} {}: {} ({:.2f} s)\n", pass ? "PASS" : "FAIL", c.id, c.name, o.detail, secs);
  }
  std::cout << fmt::format("{} of 9 criteria passed\n", 9 - failed);
  return failed ? 1 : 0;
}
