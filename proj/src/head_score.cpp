#include "qrkit/head_score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/parallel.hpp"

namespace qrkit {

using nlohmann::json;

void DetectionExample::validate() const {
  if (query.empty()) throw DatasetError("example has an empty query");
  if (docs.empty()) throw DatasetError("example has no documents");
  validate_passages(docs);
  if (gold_ids.empty()) throw DatasetError("example has no gold ids");
  std::set<std::string_view> seen;
  for (const auto& g : gold_ids) {
    const bool present =
        std::any_of(docs.begin(), docs.end(), [&](const Passage& p) { return p.id == g; });
    if (!present) throw DatasetError("gold id " + g + " is not among the documents");
    if (!seen.insert(g).second) throw DatasetError("gold id " + g + " listed twice");
  }
  if (answer) {
    if (answer->empty()) throw DatasetError("example has an empty answer");
    std::size_t holders = 0;
    for (const auto& p : docs) {
      if (seen.count(p.id) && p.text.find(*answer) != std::string::npos) ++holders;
    }
    if (holders != 1) {
      throw DatasetError(fmt::format("answer \"{}\" occurs in {} gold documents, expected exactly 1",
                                     *answer, holders));
    }
  }
}

DetectionExample example_from_json(const json& j) {
  DetectionExample e;
  e.query = j.at("query").get<std::string>();
  for (const auto& d : j.at("docs")) e.docs.push_back(passage_from_json(d));
  e.gold_ids = j.value("gold_ids", std::vector<std::string>{});
  if (auto it = j.find("answer"); it != j.end() && !it->is_null()) e.answer = it->get<std::string>();
  if (auto it = j.find("query_id"); it != j.end() && !it->is_null()) {
    e.query_id = it->is_string() ? it->get<std::string>() : it->dump();
  }
  return e;
}

json to_json(const DetectionExample& e) {
  json docs = json::array();
  for (const auto& d : e.docs) docs.push_back(to_json(d));
  json j = {{"query", e.query}, {"docs", docs}, {"gold_ids", e.gold_ids}};
  if (e.answer) j["answer"] = *e.answer;
  if (e.query_id) j["query_id"] = *e.query_id;
  return j;
}

void DetectionDataset::validate() const {
  if (examples.empty()) throw DatasetError("detection dataset " + name + " is empty");
  for (std::size_t i = 0; i < examples.size(); ++i) {
    try {
      examples[i].validate();
    } catch (const DatasetError& e) {
      throw DatasetError(fmt::format("{}: example {}: {}", name, i, e.what()));
    }
  }
}

DetectionDataset DetectionDataset::load(const std::filesystem::path& path) {
  DetectionDataset ds;
  ds.name = path.stem().string();
  std::ifstream probe(path);
  if (!probe) throw IoError("failed to open: " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(probe, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      ds.examples.push_back(example_from_json(json::parse(line)));
      ds.examples.back().validate();
    } catch (const json::exception& e) {
      throw ParseError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    } catch (const Error& e) {
      throw DatasetError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  if (ds.examples.empty()) throw DatasetError(path.string() + ": no examples");
  return ds;
}

std::string DetectionDataset::to_jsonl() const {
  std::string out;
  for (const auto& e : examples) out += to_json(e).dump() + "\n";
  return out;
}

std::string to_string(HeadMetric m) { return m == HeadMetric::qrscore ? "qrscore" : "copy_paste"; }

HeadMetric parse_metric(std::string_view s) {
  if (s == "qrscore") return HeadMetric::qrscore;
  if (s == "copy_paste") return HeadMetric::copy_paste;
  throw ArgumentError(fmt::format("unknown head metric \"{}\" (expected qrscore or copy_paste)", s));
}

void HeadScoreTable::validate() const {
  if (scores.size() != n_layers * n_heads || scores.empty()) {
    throw ArgumentError("head score table does not cover every head exactly once");
  }
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericError("head score table has non-finite scores");
    if (metric == HeadMetric::copy_paste && (s < 0.0 || s > 1.0)) {
      throw NumericError("copy-paste score outside [0, 1]");
    }
  }
}

void HeadSet::check_shape(const ModelConfig& config) const {
  if (n_layers != config.n_layers || n_heads != config.n_heads) {
    throw ArgumentError(fmt::format("head set is for {} x {} heads, model has {} x {}", n_layers,
                                    n_heads, config.n_layers, config.n_heads));
  }
}

namespace {

std::vector<std::size_t> rank_order(const HeadScoreTable& table) {
  std::vector<std::size_t> order(table.scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return table.scores[a] > table.scores[b];
  });
  return order;
}

json head_entry(HeadId id, double score) {
  return {{"layer", id.layer}, {"head", id.head}, {"score", score}};
}

}  // namespace

json to_json(const HeadScoreTable& table) {
  json heads = json::array();
  for (auto i : rank_order(table)) {
    heads.push_back(head_entry({i / table.n_heads, i % table.n_heads}, table.scores[i]));
  }
  return {{"metric", to_string(table.metric)}, {"dataset", table.dataset_name},
          {"n_examples", table.n_examples},    {"n_layers", table.n_layers},
          {"n_heads", table.n_heads},          {"heads", heads}};
}

HeadScoreTable table_from_json(const json& j) {
  HeadScoreTable t;
  t.metric = parse_metric(j.at("metric").get<std::string>());
  t.dataset_name = j.value("dataset", std::string{});
  t.n_examples = j.value("n_examples", std::size_t{0});
  t.n_layers = j.at("n_layers").get<std::size_t>();
  t.n_heads = j.at("n_heads").get<std::size_t>();
  t.scores.assign(t.n_layers * t.n_heads, NAN);
  for (const auto& h : j.at("heads")) {
    const HeadId id{h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>()};
    if (id.layer >= t.n_layers || id.head >= t.n_heads) {
      throw ParseError("head table lists out-of-range head " + to_string(id));
    }
    auto& slot = t.scores[flat_index(id, t.n_heads)];
    if (!std::isnan(slot)) throw ParseError("head table lists head " + to_string(id) + " twice");
    slot = h.at("score").get<double>();
  }
  t.validate();
  return t;
}

json to_json(const HeadSet& set, const HeadScoreTable& source) {
  json j = to_json(source);
  json heads = json::array();
  for (std::size_t i = 0; i < set.heads.size(); ++i) {
    heads.push_back(head_entry(set.heads[i], source.score(set.heads[i])));
  }
  j["heads"] = heads;
  j["k"] = set.k();
  return j;
}

HeadSet headset_from_json(const json& j, std::optional<std::size_t> top_k) {
  if (!j.contains("k")) {
    if (!top_k) throw ArgumentError("head table given where a head set is expected; pass a top-k");
    return rank_and_select(table_from_json(j), *top_k);
  }
  HeadSet s;
  s.n_layers = j.at("n_layers").get<std::size_t>();
  s.n_heads = j.at("n_heads").get<std::size_t>();
  s.provenance = fmt::format("{}:{}", j.value("metric", std::string{}), j.value("dataset", std::string{}));
  for (const auto& h : j.at("heads")) {
    const HeadId id{h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>()};
    if (id.layer >= s.n_layers || id.head >= s.n_heads) {
      throw ParseError("head set lists out-of-range head " + to_string(id));
    }
    s.heads.push_back(id);
    s.scores.push_back(h.value("score", 0.0));
  }
  if (s.heads.size() != j.at("k").get<std::size_t>()) throw ParseError("head set size disagrees with k");
  HeadMask check(s.heads);  // rejects duplicates
  return s;
}

double qrscore_span(const AttentionTensor& attn, Span query, Span doc, HeadId head) {
  if (head.layer >= attn.n_layers() || head.head >= attn.n_heads()) {
    throw IndexError("qrscore: head " + to_string(head) + " out of range");
  }
  if (query.empty()) throw ArgumentError("qrscore: empty query span");
  double total = 0.0;
  for (std::size_t tq = query.begin; tq < query.end; ++tq) {
    const auto row = attn.row(head.layer, head.head, tq);
    const std::size_t end = std::min(doc.end, tq + 1);
    double mass = 0.0;
    for (std::size_t td = doc.begin; td < end; ++td) mass += row[td];
    total += mass;
  }
  return total / static_cast<double>(query.size());
}

double qrscore_doc(const AttentionTensor& attn, const PromptLayout& layout, HeadId head,
                   std::string_view doc_id) {
  return qrscore_span(attn, layout.query_span, layout.doc_span(doc_id), head);
}

double qrscore_query(const AttentionTensor& attn, const PromptLayout& layout, HeadId head,
                     std::span<const std::string> gold_ids) {
  if (gold_ids.empty()) throw ArgumentError("qrscore_query: empty gold set");
  double total = 0.0;
  for (const auto& g : gold_ids) total += qrscore_doc(attn, layout, head, g);
  return total;
}

namespace {

PromptLayout layout_for(const TokenizerSpec& spec, const DetectionExample& ex,
                        std::string_view template_id, const ModelConfig& config, std::size_t index) {
  try {
    return build_prompt(spec, ex.docs, ex.query, template_id, config.max_seq_len);
  } catch (const ContextOverflowError& e) {
    throw ContextOverflowError(fmt::format("example {}: {}", index, e.what()));
  }
}

HeadScoreTable mean_table(const std::vector<std::vector<double>>& per_example, const ModelConfig& config,
                          HeadMetric metric, const std::string& name) {
  HeadScoreTable t;
  t.n_layers = config.n_layers;
  t.n_heads = config.n_heads;
  t.metric = metric;
  t.dataset_name = name;
  t.n_examples = per_example.size();
  t.scores.assign(config.total_heads(), 0.0);
  for (const auto& row : per_example) {
    for (std::size_t i = 0; i < row.size(); ++i) t.scores[i] += row[i];
  }
  for (auto& s : t.scores) s /= static_cast<double>(per_example.size());
  t.validate();
  return t;
}

}  // namespace

HeadScoreTable qrscore_dataset(const AttentionProvider& provider, const TokenizerSpec& spec,
                               const DetectionDataset& dataset, std::string_view template_id,
                               std::size_t jobs) {
  dataset.validate();
  const ModelConfig& config = provider.config();
  auto per_example = parallel_map(dataset.examples.size(), jobs, [&](std::size_t i) {
    const auto& ex = dataset.examples[i];
    const PromptLayout layout = layout_for(spec, ex, template_id, config, i);
    const ForwardResult fwd = provider.forward(layout.tokens);
    std::vector<double> row(config.total_heads());
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        row[l * config.n_heads + h] = qrscore_query(fwd.attention, layout, {l, h}, ex.gold_ids);
      }
    }
    return row;
  });
  return mean_table(per_example, config, HeadMetric::qrscore, dataset.name);
}

json to_json(const CopyTrace& trace) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"token", s.token}, {"argmax", s.argmax_pos}, {"copied", s.copied}});
  }
  return {{"needle_positions", trace.needle_positions},
          {"steps", steps},
          {"head_scores", trace.head_scores}};
}

double copy_fraction(std::size_t copied, std::size_t answer_len) {
  if (answer_len == 0) throw ArgumentError("copy_fraction: empty answer");
  if (copied > answer_len) throw ArgumentError("copy_fraction: more copies than answer tokens");
  return static_cast<double>(copied) / static_cast<double>(answer_len);
}

CopyTrace trace_copies(const DecodeTrace& decode, std::span<const TokenId> prompt,
                       std::span<const std::size_t> needle_positions) {
  if (decode.steps.empty()) throw DecodeError("decode produced no tokens");
  const std::size_t n_heads_total = decode.n_layers * decode.n_heads;
  CopyTrace trace;
  trace.needle_positions.assign(needle_positions.begin(), needle_positions.end());
  std::vector<std::set<std::size_t>> copied_positions(n_heads_total);

  for (const auto& step : decode.steps) {
    CopyStep rec;
    rec.token = step.token;
    rec.argmax_pos.resize(n_heads_total);
    rec.copied.assign(n_heads_total, 0);
    for (std::size_t i = 0; i < n_heads_total; ++i) {
      const HeadId id{i / decode.n_heads, i % decode.n_heads};
      const std::size_t pos = argmax(step.row(id, decode.n_heads));
      rec.argmax_pos[i] = pos;
      const bool in_needle = std::find(needle_positions.begin(), needle_positions.end(), pos) !=
                             needle_positions.end();
      if (in_needle && pos < prompt.size() && prompt[pos] == step.token) {
        rec.copied[i] = 1;
        copied_positions[i].insert(pos);
      }
    }
    trace.steps.push_back(std::move(rec));
  }
  trace.head_scores.resize(n_heads_total);
  for (std::size_t i = 0; i < n_heads_total; ++i) {
    trace.head_scores[i] = copy_fraction(copied_positions[i].size(), needle_positions.size());
  }
  return trace;
}

CopyPasteResult copy_paste_score(const AttentionProvider& provider, const TokenizerSpec& spec,
                                 const DetectionDataset& dataset, std::string_view template_id,
                                 std::optional<std::size_t> max_new, std::size_t jobs) {
  dataset.validate();
  const ModelConfig& config = provider.config();
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    if (!dataset.examples[i].answer) {
      throw DatasetError(fmt::format("{}: example {} has no answer; copy-paste scoring needs one",
                                     dataset.name, i));
    }
  }

  auto traces = parallel_map(dataset.examples.size(), jobs, [&](std::size_t i) {
    const auto& ex = dataset.examples[i];
    const PromptLayout layout = layout_for(spec, ex, template_id, config, i);
    const auto needle = spec.tokenize(*ex.answer);

    std::vector<std::size_t> positions;
    for (const auto& g : ex.gold_ids) {
      const Span span = layout.doc_span(g);
      auto first = layout.tokens.begin() + static_cast<std::ptrdiff_t>(span.begin);
      auto last = layout.tokens.begin() + static_cast<std::ptrdiff_t>(span.end);
      auto hit = std::search(first, last, needle.begin(), needle.end());
      if (hit != last) {
        const auto start = static_cast<std::size_t>(hit - layout.tokens.begin());
        for (std::size_t t = 0; t < needle.size(); ++t) positions.push_back(start + t);
        break;
      }
    }
    if (positions.empty()) {
      throw DatasetError(fmt::format("example {}: answer not found as a token run in its gold document", i));
    }
    const auto trace = greedy_decode_with_trace(provider, layout.tokens, max_new.value_or(needle.size()),
                                                {}, spec.eos());
    return trace_copies(trace, layout.tokens, positions);
  });

  std::vector<std::vector<double>> per_example;
  per_example.reserve(traces.size());
  for (const auto& t : traces) per_example.push_back(t.head_scores);
  return {mean_table(per_example, config, HeadMetric::copy_paste, dataset.name), std::move(traces)};
}

HeadSet rank_and_select(const HeadScoreTable& table, std::size_t k) {
  table.validate();
  const std::size_t total = table.n_layers * table.n_heads;
  if (k < 1 || k > total) {
    throw ArgumentError(fmt::format("top-k must be in [1, {}], got {}", total, k));
  }
  const auto order = rank_order(table);
  HeadSet set;
  set.n_layers = table.n_layers;
  set.n_heads = table.n_heads;
  set.provenance = fmt::format("{}:{}", to_string(table.metric), table.dataset_name);
  for (std::size_t i = 0; i < k; ++i) {
    set.heads.push_back({order[i] / table.n_heads, order[i] % table.n_heads});
    set.scores.push_back(table.scores[order[i]]);
  }
  return set;
}

std::size_t headset_overlap(const HeadSet& a, const HeadSet& b) {
  if (a.n_layers != b.n_layers || a.n_heads != b.n_heads) {
    throw ArgumentError("headset_overlap: head sets come from different model shapes");
  }
  const std::set<HeadId> sa(a.heads.begin(), a.heads.end());
  std::size_t n = 0;
  for (const auto& h : std::set<HeadId>(b.heads.begin(), b.heads.end())) n += sa.count(h);
  return n;
}

}  // namespace qrkit
