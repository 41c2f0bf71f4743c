#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include <CLI11.hpp>
#include <fmt/core.h>

#include "qrkit/cli.hpp"
#include "qrkit/errors.hpp"
#include "qrkit/head_score.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/metrics.hpp"
#include "qrkit/parallel.hpp"
#include "qrkit/retriever.hpp"
#include "qrkit/rng.hpp"
#include "qrkit/synth.hpp"
#include "qrkit/weights_io.hpp"

namespace qrkit {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Invocation {
  std::string command;
  RunConfig config;
  json options;

  std::string hash() const {
    const json core = {{"command", command}, {"config", config.to_json()}, {"options", options}};
    return hex64(fnv1a64(core.dump()));
  }
};

std::string pretty(const json& j) { return j.dump(2) + "\n"; }

json read_json_file(const fs::path& path) {
  try {
    return json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

HeadSet load_headset(const fs::path& path, std::size_t top_k) {
  HeadSet set = headset_from_json(read_json_file(path), top_k);
  if (set.provenance.empty()) set.provenance = path.filename().string();
  return set;
}

struct RerankQuery {
  std::string query;
  std::optional<std::string> query_id;
  std::vector<Passage> docs;
  std::vector<std::string> gold_ids;
};

std::vector<RerankQuery> load_queries(const fs::path& path) {
  std::vector<RerankQuery> out;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(path)) {
    ++line;
    try {
      RerankQuery q;
      q.query = j.at("query").get<std::string>();
      if (auto it = j.find("query_id"); it != j.end() && !it->is_null()) {
        q.query_id = it->is_string() ? it->get<std::string>() : it->dump();
      }
      for (const auto& d : j.at("docs")) q.docs.push_back(passage_from_json(d));
      validate_passages(q.docs);
      if (auto it = j.find("gold_ids"); it != j.end()) q.gold_ids = it->get<std::vector<std::string>>();
      out.push_back(std::move(q));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: record {}: {}", path.string(), line, e.what()));
    } catch (const Error& e) {
      throw DatasetError(fmt::format("{}: record {}: {}", path.string(), line, e.what()));
    }
  }
  if (out.empty()) throw DatasetError(path.string() + ": no queries");
  return out;
}

std::vector<Passage> niah_pool(const Invocation& inv, const TokenizerSpec& spec) {
  const auto& o = inv.options;
  if (!o.at("pool").is_null()) return load_passages_jsonl(o.at("pool").get<std::string>());
  auto excluded = words_of({o.at("needle").get<std::string>(), o.at("question").get<std::string>(),
                            inv.config.null_query});
  return word_salad_pool(spec, excluded, o.at("pool_size").get<std::size_t>(), 6, 20, inv.config.seed);
}

// ---------------------------------------------------------------------------

void cmd_detect_heads(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  const auto spec = make_tokenizer(inv.config);
  const auto provider = make_provider(inv.config, spec);
  const auto dataset = DetectionDataset::load(inv.options.at("dataset").get<std::string>());
  const HeadMetric metric = parse_metric(inv.options.at("metric").get<std::string>());
  const std::string hash = inv.hash();

  HeadScoreTable table;
  std::vector<CopyTrace> traces;
  if (metric == HeadMetric::qrscore) {
    table = qrscore_dataset(*provider, spec, dataset, inv.config.template_id, inv.config.jobs);
  } else {
    std::optional<std::size_t> max_new;
    if (!inv.options.at("max_new").is_null()) max_new = inv.options.at("max_new").get<std::size_t>();
    auto result = copy_paste_score(*provider, spec, dataset, inv.config.template_id, max_new, inv.config.jobs);
    table = std::move(result.table);
    traces = std::move(result.traces);
  }
  const std::size_t k = std::min(inv.config.top_k_heads, table.scores.size());
  HeadSet set = rank_and_select(table, k);

  json table_json = to_json(table);
  table_json["config_hash"] = hash;
  json set_json = to_json(set, table);
  set_json["config_hash"] = hash;
  write_file_atomic(out_dir / "head_scores.json", pretty(table_json));
  write_file_atomic(out_dir / "headset.json", pretty(set_json));
  if (metric == HeadMetric::copy_paste) {
    std::string lines;
    for (const auto& t : traces) lines += to_json(t).dump() + "\n";
    write_file_atomic(out_dir / "copy_traces.jsonl", lines);
  }
  out << fmt::format("scored {} heads on {} examples ({}); top {}:", table.scores.size(), table.n_examples,
                     to_string(metric), set.k());
  for (const auto& h : set.heads) out << ' ' << to_string(h);
  out << fmt::format("\n{:.3f}% of all heads\n", 100.0 * set.fraction_of_total());
}

void cmd_rerank(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  const auto spec = make_tokenizer(inv.config);
  const auto provider = make_provider(inv.config, spec);
  const HeadSet headset = load_headset(inv.options.at("headset").get<std::string>(), inv.config.top_k_heads);
  headset.check_shape(provider->config());
  const auto queries = load_queries(inv.options.at("dataset").get<std::string>());
  const auto ks = inv.options.at("k").get<std::vector<std::size_t>>();
  const CalibrationConfig calib{inv.config.calibration, inv.config.null_query};
  std::optional<std::size_t> emit;
  if (!inv.options.at("emit_context").is_null()) emit = inv.options.at("emit_context").get<std::size_t>();

  const auto ranked = parallel_map(queries.size(), inv.config.jobs, [&](std::size_t i) {
    try {
      RankedList r = score_passages(*provider, spec, headset, queries[i].query, queries[i].docs, calib,
                                    inv.config.template_id);
      r.query_id = queries[i].query_id;
      return r;
    } catch (const ContextOverflowError& e) {
      throw ContextOverflowError(fmt::format("query {}: {}", i + 1, e.what()));
    }
  });

  std::string lines;
  for (const auto& r : ranked) lines += to_json(r).dump() + "\n";
  write_file_atomic(out_dir / "rankings.jsonl", lines);

  bool any_gold = false;
  json per_query = json::array();
  std::vector<std::vector<double>> columns(ks.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (queries[i].gold_ids.empty()) continue;
    any_gold = true;
    Judgment judg{queries[i].query_id.value_or(queries[i].query), {}};
    for (const auto& g : queries[i].gold_ids) judg.grades[g] = 1;
    json row = {{"query_id", judg.query_id}};
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const double v = recall_at_k(ranked[i], judg, ks[j]);
      row[fmt::format("recall@{}", ks[j])] = v;
      columns[j].push_back(v);
    }
    per_query.push_back(row);
  }
  if (any_gold) {
    json mean = json::object();
    for (std::size_t j = 0; j < ks.size(); ++j) mean[fmt::format("recall@{}", ks[j])] = aggregate_mean(columns[j]);
    write_file_atomic(out_dir / "recall.json",
                      pretty({{"config_hash", inv.hash()}, {"mean", mean}, {"per_query", per_query}}));
    out << "recall " << mean.dump() << "\n";
  }
  if (emit) {
    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto reduced = select_top_k_context(ranked[i], queries[i].docs, std::min(*emit, queries[i].docs.size()));
      json passages = json::array();
      for (const auto& p : reduced.passages) passages.push_back(to_json(p));
      json meta = {{"query", queries[i].query}, {"k", reduced.passages.size()}, {"passages", passages}};
      if (queries[i].query_id) meta["query_id"] = *queries[i].query_id;
      write_file_atomic(out_dir / "contexts" / fmt::format("{}.txt", i), reduced.prompt);
      write_file_atomic(out_dir / "contexts" / fmt::format("{}.json", i), pretty(meta));
    }
  }
  out << fmt::format("ranked {} queries with {} heads\n", ranked.size(), headset.k());
}

void cmd_grid(const Invocation& inv, const fs::path& out_dir, std::ostream& out, bool with_mask) {
  const auto spec = make_tokenizer(inv.config);
  const auto provider = make_provider(inv.config, spec);
  const auto& o = inv.options;
  const ModelConfig& cfg = provider->config();

  std::vector<HeadId> mask_heads;
  if (with_mask) {
    std::optional<HeadSet> headset;
    if (!o.at("headset").is_null()) {
      headset = load_headset(o.at("headset").get<std::string>(), inv.config.top_k_heads);
      headset->check_shape(cfg);
    }
    if (!o.at("random").is_null()) {
      const auto n = o.at("random").get<std::size_t>();
      std::set<HeadId> exclude;
      if (headset) exclude.insert(headset->heads.begin(), headset->heads.end());
      std::vector<HeadId> candidates;
      for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
          if (!exclude.count({l, h})) candidates.push_back({l, h});
        }
      }
      if (n > candidates.size()) {
        throw ArgumentError(fmt::format("--random {}: only {} heads are eligible", n, candidates.size()));
      }
      Rng rng(inv.config.seed);
      rng.shuffle(candidates);
      mask_heads.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(n));
    } else if (headset) {
      mask_heads = headset->heads;
    }
  }
  const HeadMask mask(mask_heads);

  NiahTask task;
  task.needle = o.at("needle").get<std::string>();
  task.question = o.at("question").get<std::string>();
  task.haystack = niah_pool(inv, spec);
  task.seed = inv.config.seed;
  NiahGrid grid{o.at("lengths").get<std::vector<std::size_t>>(), o.at("depths").get<std::vector<double>>(),
                o.at("trials").get<std::size_t>()};
  const auto result = run_niah_grid(*provider, spec, task, grid, mask, inv.config.jobs, inv.config.template_id);

  json masked = json::array();
  for (const auto& h : mask.heads()) masked.push_back({{"layer", h.layer}, {"head", h.head}});
  const json summary = {{"config_hash", inv.hash()},
                        {"mask", masked},
                        {"seed", inv.config.seed},
                        {"trials", grid.trials},
                        {"context_lengths", grid.context_lengths},
                        {"depths", grid.depths},
                        {"needle", task.needle},
                        {"question", task.question},
                        {"template", inv.config.template_id},
                        {"accuracy", result.accuracy},
                        {"mean_accuracy", result.mean()},
                        {"chance", niah_chance_level(spec)}};
  write_file_atomic(out_dir / "niah_grid.csv", result.to_csv());
  write_file_atomic(out_dir / "niah_grid.json", pretty(summary));
  out << fmt::format("masked {} heads; mean accuracy {:.4f} (chance {:.4f})\n", mask.heads().size(), result.mean(),
                     niah_chance_level(spec));
}

void cmd_eval(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  const fs::path rankings_path = inv.options.at("rankings").get<std::string>();
  std::vector<RankedList> rankings;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(rankings_path)) {
    ++line;
    try {
      rankings.push_back(ranked_from_json(j));
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}: record {}: {}", rankings_path.string(), line, e.what()));
    }
  }
  const auto qrels = load_qrels_tsv(inv.options.at("qrels").get<std::string>());
  std::vector<MetricSpec> metrics;
  for (const auto& m : inv.options.at("metrics")) metrics.push_back(parse_metric_spec(m.get<std::string>()));
  const EvalReport report = evaluate(rankings, qrels, metrics);
  json j = report.to_json();
  j["config_hash"] = inv.hash();
  write_file_atomic(out_dir / "report.json", pretty(j));
  write_file_atomic(out_dir / "report.txt", report.to_text());
  out << report.to_text();
}

void cmd_gen_niah(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  const auto spec = make_tokenizer(inv.config);
  const auto& o = inv.options;
  NiahTask task;
  task.needle = o.at("needle").get<std::string>();
  task.question = o.at("question").get<std::string>();
  task.haystack = niah_pool(inv, spec);
  task.seed = inv.config.seed;
  const auto lengths = o.at("lengths").get<std::vector<std::size_t>>();
  const auto depths = o.at("depths").get<std::vector<double>>();
  if (lengths.empty() || depths.empty()) throw ArgumentError("gen-niah: lengths and depths must be non-empty");
  const auto n = o.at("n").get<std::size_t>();
  if (n == 0) throw ArgumentError("gen-niah: --n must be >= 1");

  DetectionDataset ds;
  for (std::size_t i = 0; i < n; ++i) {
    const double depth = depths[i % depths.size()];
    const std::size_t len = lengths[(i / depths.size()) % lengths.size()];
    auto ex = niah_trial_example(spec, task, len, depth, i, 0);
    ex.query_id = fmt::format("niah-{}", i);
    ds.examples.push_back(std::move(ex));
  }
  ds.validate();
  write_file_atomic(out_dir / "dataset.jsonl", ds.to_jsonl());
  out << fmt::format("wrote {} examples\n", n);
}

void cmd_craft_copy_model(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  const auto spec = make_tokenizer(inv.config);
  const auto& o = inv.options;
  const auto weights = craft_copy_weights(spec, o.at("needle").get<std::string>(), o.at("max_seq_len").get<std::size_t>(),
                                          inv.config.seed);
  const std::string name = o.at("format").get<std::string>() == "json" ? "model.json" : "model.qrkw";
  if (name == "model.json") {
    write_file_atomic(out_dir / name, serialize_weights_json(weights));
  } else {
    write_file_atomic(out_dir / name, serialize_weights_binary(weights));
  }
  out << fmt::format("wrote {} ({} layer, {} heads, vocab {})\n", (out_dir / name).string(),
                     weights.config.n_layers, weights.config.n_heads, weights.config.vocab_size);
}

void execute(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
  if (inv.command == "detect-heads") {
    cmd_detect_heads(inv, out_dir, out);
  } else if (inv.command == "rerank") {
    cmd_rerank(inv, out_dir, out);
  } else if (inv.command == "ablate") {
    cmd_grid(inv, out_dir, out, true);
  } else if (inv.command == "niah") {
    cmd_grid(inv, out_dir, out, false);
  } else if (inv.command == "eval") {
    cmd_eval(inv, out_dir, out);
  } else if (inv.command == "gen-niah") {
    cmd_gen_niah(inv, out_dir, out);
  } else if (inv.command == "craft-copy-model") {
    cmd_craft_copy_model(inv, out_dir, out);
  } else {
    throw ArgumentError("unknown command '" + inv.command + "'");
  }
  const json manifest = {{"command", inv.command},
                         {"config", inv.config.to_json()},
                         {"options", inv.options},
                         {"config_hash", inv.hash()}};
  write_file_atomic(out_dir / "manifest.json", pretty(manifest));
}

// ---------------------------------------------------------------------------
// Argument parsing

struct CommonFlags {
  std::optional<std::string> config_file, model, synthetic_plan, tokenizer, template_id, null_query, out;
  std::optional<std::size_t> top_k_heads, jobs;
  std::optional<std::uint64_t> seed;
  bool no_calibration = false;

  void attach(CLI::App* app) {
    app->add_option("--config", config_file, "key = value config file");
    app->add_option("--model", model, "weight file");
    app->add_option("--synthetic-plan", synthetic_plan, "synthetic provider plan (JSON)");
    app->add_option("--tokenizer", tokenizer, "tokenizer spec (JSON); byte-level when omitted");
    app->add_option("--template", template_id, "prompt template id");
    app->add_option("--top-k-heads", top_k_heads, "heads kept in a head set (default 16)");
    app->add_flag("--no-calibration", no_calibration, "skip the null-query baseline");
    app->add_option("--null-query", null_query, "null query for calibration (default N/A)");
    app->add_option("--seed", seed, "random seed");
    app->add_option("--jobs", jobs, "worker threads");
    app->add_option("--out", out, "output directory");
  }

  KeyValues layer() const {
    KeyValues kv;
    auto put = [&](const char* key, const auto& v) {
      if (v) kv[key] = fmt::format("{}", *v);
    };
    put("model", model);
    put("synthetic_plan", synthetic_plan);
    put("tokenizer", tokenizer);
    put("template", template_id);
    put("null_query", null_query);
    put("out", out);
    put("top_k_heads", top_k_heads);
    put("jobs", jobs);
    put("seed", seed);
    if (no_calibration) kv["calibration"] = "false";
    return kv;
  }
};

struct GridFlags {
  std::vector<std::size_t> lengths{64, 128, 192, 256};
  std::vector<double> depths{0.0, 0.33, 0.67, 1.0};
  std::size_t trials = 1;
  std::string needle, question;
  std::optional<std::string> pool;
  std::size_t pool_size = 64;

  void attach(CLI::App* app, bool need_text) {
    app->add_option("--lengths", lengths, "context lengths in tokens")->delimiter(',');
    app->add_option("--depths", depths, "needle depth fractions")->delimiter(',');
    app->add_option("--trials", trials, "trials per cell");
    auto* n = app->add_option("--needle", needle, "needle text");
    auto* q = app->add_option("--question", question, "question text");
    if (need_text) {
      n->required();
      q->required();
    }
    app->add_option("--pool", pool, "distractor passages (JSONL); word salad when omitted");
    app->add_option("--pool-size", pool_size, "generated distractor count");
  }

  json to_json() const {
    return {{"lengths", lengths}, {"depths", depths},   {"trials", trials},
            {"needle", needle},   {"question", question}, {"pool", pool ? json(*pool) : json(nullptr)},
            {"pool_size", pool_size}};
  }
};

std::optional<std::size_t> parse_emit_context(const std::optional<std::string>& raw) {
  if (!raw) return std::nullopt;
  std::string s = trim(*raw);
  if (s.rfind("k=", 0) == 0) s = s.substr(2);
  std::size_t k = 0;
  try {
    std::size_t used = 0;
    k = std::stoul(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw ArgumentError("--emit-context: expected k=N or N, got '" + *raw + "'");
  }
  if (k == 0) throw ArgumentError("--emit-context: k must be >= 1");
  return k;
}

template <typename T>
json opt_json(const std::optional<T>& v) {
  return v ? json(*v) : json(nullptr);
}

}  // namespace

void replay_manifest(const fs::path& manifest, const fs::path& out_dir, std::ostream& out) {
  const json m = read_json_file(manifest);
  Invocation inv;
  try {
    inv.command = m.at("command").get<std::string>();
    inv.config = RunConfig::from_json(m.at("config"));
    inv.options = m.at("options");
  } catch (const json::exception& e) {
    throw ParseError(manifest.string() + ": " + e.what());
  }
  if (auto h = m.find("config_hash"); h != m.end() && h->get<std::string>() != inv.hash()) {
    throw ParseError(manifest.string() + ": config_hash does not match the recorded command");
  }
  inv.config.out = out_dir.string();
  execute(inv, out_dir, out);
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"qrkit: query-focused retrieval head toolkit"};
  app.require_subcommand(1);

  CommonFlags common;

  auto* detect = app.add_subcommand("detect-heads", "score heads on a detection dataset");
  std::string detect_dataset, detect_metric = "qrscore";
  std::optional<std::size_t> max_new;
  common.attach(detect);
  detect->add_option("--dataset", detect_dataset, "detection dataset (JSONL)")->required();
  detect->add_option("--metric", detect_metric, "qrscore or copy_paste");
  detect->add_option("--max-new", max_new, "decode length for copy_paste (default: answer length)");

  auto* rerank = app.add_subcommand("rerank", "rank passages with a head set");
  std::string rerank_headset, rerank_dataset;
  std::vector<std::size_t> ks{5, 10};
  std::optional<std::string> emit_context;
  common.attach(rerank);
  rerank->add_option("--headset", rerank_headset, "head set or head score file")->required();
  rerank->add_option("--dataset,--queries", rerank_dataset, "queries with candidate passages (JSONL)")->required();
  rerank->add_option("--k", ks, "recall cutoffs")->delimiter(',');
  rerank->add_option("--emit-context", emit_context, "write the top-k reduced context per query (k=N)");

  auto* ablate = app.add_subcommand("ablate", "NIAH grid with heads masked");
  std::optional<std::string> ablate_headset;
  std::optional<std::size_t> random_n;
  GridFlags ablate_grid;
  common.attach(ablate);
  ablate->add_option("--headset", ablate_headset, "heads to mask, or to exclude with --random");
  ablate->add_option("--random", random_n, "mask this many random heads");
  ablate_grid.attach(ablate, true);

  auto* niah = app.add_subcommand("niah", "NIAH grid without masking");
  GridFlags niah_grid;
  common.attach(niah);
  niah_grid.attach(niah, true);

  auto* eval = app.add_subcommand("eval", "score rankings against qrels");
  std::string eval_rankings, eval_qrels;
  std::vector<std::string> eval_metrics{"recall@5", "recall@10", "ndcg@10"};
  common.attach(eval);
  eval->add_option("--rankings", eval_rankings, "rankings.jsonl")->required();
  eval->add_option("--qrels", eval_qrels, "query_id<TAB>passage_id<TAB>grade")->required();
  eval->add_option("--metrics", eval_metrics, "e.g. recall@5,ndcg@10")->delimiter(',');

  auto* gen = app.add_subcommand("gen-niah", "write a generated NIAH detection dataset");
  GridFlags gen_grid;
  std::size_t gen_n = 16;
  common.attach(gen);
  gen_grid.attach(gen, true);
  gen->add_option("--n", gen_n, "number of examples");

  auto* craft = app.add_subcommand("craft-copy-model", "write a one-layer copy-head model");
  std::string craft_needle, craft_format = "binary";
  std::size_t craft_len = 1024;
  common.attach(craft);
  craft->add_option("--needle", craft_needle, "needle the copy head reproduces")->required();
  craft->add_option("--max-seq-len", craft_len, "model context size");
  craft->add_option("--format", craft_format, "binary or json")->check(CLI::IsMember({"binary", "json"}));

  auto* replay = app.add_subcommand("replay", "re-run a command from its manifest");
  std::string replay_path;
  std::optional<std::string> replay_out;
  replay->add_option("manifest", replay_path, "manifest.json")->required();
  replay->add_option("--out", replay_out, "output directory (default: the manifest's directory)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    err << "error: " << e.what() << "\n";
    return 2;
  }

  try {
    if (replay->parsed()) {
      const fs::path manifest = replay_path;
      replay_manifest(manifest, replay_out ? fs::path(*replay_out) : manifest.parent_path(), out);
      return 0;
    }

    Invocation inv;
    inv.command = app.get_subcommands().front()->get_name();
    std::vector<KeyValues> layers;
    if (common.config_file) layers.push_back(load_config_file(*common.config_file));
    layers.push_back(process_env_overrides());
    layers.push_back(common.layer());
    inv.config = resolve_config(layers);

    if (detect->parsed()) {
      inv.options = {{"dataset", detect_dataset}, {"metric", detect_metric}, {"max_new", opt_json(max_new)}};
      parse_metric(detect_metric);
    } else if (rerank->parsed()) {
      for (auto k : ks) {
        if (k == 0) throw ArgumentError("--k: cutoffs must be >= 1");
      }
      inv.options = {{"headset", rerank_headset},
                     {"dataset", rerank_dataset},
                     {"k", ks},
                     {"emit_context", opt_json(parse_emit_context(emit_context))}};
    } else if (ablate->parsed()) {
      inv.options = ablate_grid.to_json();
      inv.options["headset"] = opt_json(ablate_headset);
      inv.options["random"] = opt_json(random_n);
    } else if (niah->parsed()) {
      inv.options = niah_grid.to_json();
    } else if (eval->parsed()) {
      inv.options = {{"rankings", eval_rankings}, {"qrels", eval_qrels}, {"metrics", eval_metrics}};
    } else if (gen->parsed()) {
      inv.options = gen_grid.to_json();
      inv.options["n"] = gen_n;
    } else if (craft->parsed()) {
      inv.options = {{"needle", craft_needle}, {"max_seq_len", craft_len}, {"format", craft_format}};
    }
    execute(inv, inv.config.out, out);
    return 0;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace qrkit
