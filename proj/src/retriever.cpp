#include "qrkit/retriever.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/core.h>

#include "qrkit/errors.hpp"

namespace qrkit {

using nlohmann::json;

void CalibrationConfig::validate() const {
  if (enabled && null_query.empty()) throw ArgumentError("calibration: null query must be non-empty");
}

std::vector<std::string> RankedList::ids() const {
  std::vector<std::string> out;
  out.reserve(entries.size());
  for (const auto& e : entries) out.push_back(e.passage_id);
  return out;
}

json to_json(const RankedList& ranked) {
  json ranking = json::array();
  for (const auto& e : ranked.entries) {
    json item = {{"id", e.passage_id}, {"raw", e.raw}, {"final", e.final_score}};
    if (e.baseline) item["baseline"] = *e.baseline;
    ranking.push_back(item);
  }
  json j = {{"query", ranked.query}, {"ranking", ranking}};
  if (ranked.query_id) j["query_id"] = *ranked.query_id;
  return j;
}

RankedList ranked_from_json(const json& j) {
  RankedList r;
  r.query = j.at("query").get<std::string>();
  if (auto it = j.find("query_id"); it != j.end() && !it->is_null()) {
    r.query_id = it->is_string() ? it->get<std::string>() : it->dump();
  }
  for (const auto& item : j.at("ranking")) {
    PassageScore s;
    s.passage_id = item.at("id").get<std::string>();
    s.raw = item.value("raw", 0.0);
    if (auto b = item.find("baseline"); b != item.end() && !b->is_null()) s.baseline = b->get<double>();
    s.final_score = item.value("final", s.raw);
    r.entries.push_back(std::move(s));
  }
  return r;
}

namespace {

std::vector<double> headset_mean(const AttentionTensor& attn, const PromptLayout& layout,
                                 const HeadSet& headset) {
  std::vector<double> out;
  out.reserve(layout.doc_spans.size());
  for (const auto& d : layout.doc_spans) {
    double sum = 0.0;
    for (const auto& h : headset.heads) sum += qrscore_span(attn, layout.query_span, d.span, h);
    out.push_back(sum / static_cast<double>(headset.heads.size()));
  }
  return out;
}

}  // namespace

RankedList score_passages(const AttentionProvider& provider, const TokenizerSpec& spec,
                          const HeadSet& headset, std::string_view query,
                          std::span<const Passage> docs, const CalibrationConfig& calib,
                          std::string_view template_id) {
  if (docs.empty()) throw ArgumentError("score_passages: no passages");
  if (headset.heads.empty()) throw ArgumentError("score_passages: empty head set");
  calib.validate();
  const ModelConfig& config = provider.config();
  headset.check_shape(config);
  for (const auto& h : headset.heads) check_head(h, config);

  const PromptLayout layout = build_prompt(spec, docs, query, template_id, config.max_seq_len);
  const ForwardResult fwd = provider.forward(layout.tokens);
  const auto raw = headset_mean(fwd.attention, layout, headset);

  std::vector<double> baseline;
  if (calib.enabled) {
    const PromptLayout null_layout =
        build_prompt(spec, docs, calib.null_query, template_id, config.max_seq_len);
    // documents precede the query, so their spans are unchanged
    if (null_layout.doc_spans != layout.doc_spans) {
      throw ArgumentError("calibration: null-query prompt does not align with the query prompt");
    }
    const ForwardResult null_fwd = provider.forward(null_layout.tokens);
    baseline = headset_mean(null_fwd.attention, null_layout, headset);
  }

  RankedList ranked;
  ranked.query = std::string(query);
  ranked.headset = headset.provenance;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    PassageScore s;
    s.passage_id = docs[i].id;
    s.raw = raw[i];
    s.final_score = raw[i];
    if (calib.enabled) {
      s.baseline = baseline[i];
      s.final_score = raw[i] - baseline[i];
    }
    ranked.entries.push_back(std::move(s));
  }
  std::stable_sort(ranked.entries.begin(), ranked.entries.end(),
                   [](const PassageScore& a, const PassageScore& b) { return a.final_score > b.final_score; });
  return ranked;
}

RankedList rerank(const AttentionProvider& provider, const TokenizerSpec& spec,
                  const HeadSet& headset, std::string_view query,
                  std::span<const Passage> first_stage, const CalibrationConfig& calib,
                  std::string_view template_id) {
  return score_passages(provider, spec, headset, query, first_stage, calib, template_id);
}

ReducedContext select_top_k_context(const RankedList& ranked, std::span<const Passage> docs,
                                    std::size_t k) {
  if (k < 1 || k > docs.size()) {
    throw ArgumentError(fmt::format("select_top_k_context: k must be in [1, {}], got {}", docs.size(), k));
  }
  if (ranked.entries.size() < k) throw ArgumentError("select_top_k_context: ranking shorter than k");
  std::set<std::string> chosen;
  for (std::size_t i = 0; i < k; ++i) chosen.insert(ranked.entries[i].passage_id);

  ReducedContext out;
  for (const auto& d : docs) {
    if (chosen.count(d.id)) out.passages.push_back(d);
  }
  if (out.passages.size() != k) {
    throw KeyError("select_top_k_context: ranked ids do not match the passage list");
  }
  out.prompt = render_prompt_text(out.passages, ranked.query);
  return out;
}

}  // namespace qrkit
