#include "qrkit/prompt.hpp"

#include <algorithm>
#include <set>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"

namespace qrkit {

void validate_passages(std::span<const Passage> docs) {
  std::set<std::string_view> ids;
  for (const auto& d : docs) {
    if (d.id.empty()) throw DatasetError("passage with empty id");
    if (d.text.empty()) throw DatasetError("passage " + d.id + " has empty text");
    if (!ids.insert(d.id).second) throw DatasetError("duplicate passage id " + d.id);
  }
}

Passage passage_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("id") || !j.contains("text")) {
    throw ParseError("passage must be an object with \"id\" and \"text\"");
  }
  const auto& id = j.at("id");
  Passage p;
  p.id = id.is_string() ? id.get<std::string>() : id.dump();
  p.text = j.at("text").get<std::string>();
  return p;
}

nlohmann::json to_json(const Passage& p) { return {{"id", p.id}, {"text", p.text}}; }

std::vector<Passage> load_passages_jsonl(const std::filesystem::path& path) {
  std::vector<Passage> out;
  std::size_t n = 0;
  for (const auto& j : read_jsonl(path)) {
    ++n;
    try {
      out.push_back(passage_from_json(j));
    } catch (const std::exception& e) {
      throw ParseError(fmt::format("{}: record {}: {}", path.string(), n, e.what()));
    }
  }
  validate_passages(out);
  return out;
}

const Span& PromptLayout::doc_span(std::string_view id) const {
  for (const auto& d : doc_spans) {
    if (d.id == id) return d.span;
  }
  throw KeyError(fmt::format("document \"{}\" not in prompt layout", id));
}

bool PromptLayout::has_doc(std::string_view id) const {
  return std::any_of(doc_spans.begin(), doc_spans.end(), [&](const DocSpan& d) { return d.id == id; });
}

void PromptLayout::validate() const {
  const std::size_t n = tokens.size();
  std::vector<Span> spans;
  for (const auto& d : doc_spans) spans.push_back(d.span);
  spans.push_back(query_span);
  for (const auto& s : spans) {
    if (s.begin > s.end || s.end > n) throw ArgumentError("layout: span out of range");
  }
  for (const auto& d : doc_spans) {
    if (d.span.end > query_span.begin) throw ArgumentError("layout: query must follow every document");
  }
  std::sort(spans.begin(), spans.end(), [](const Span& a, const Span& b) { return a.begin < b.begin; });
  for (std::size_t i = 1; i < spans.size(); ++i) {
    if (spans[i].begin < spans[i - 1].end) throw ArgumentError("layout: overlapping spans");
  }
}

PromptLayout build_prompt(const TokenizerSpec& spec, std::span<const Passage> docs,
                          std::string_view query, std::string_view template_id,
                          std::optional<std::size_t> max_seq_len) {
  if (template_id != kDefaultTemplate) {
    throw ArgumentError(fmt::format("unknown prompt template \"{}\"", template_id));
  }
  if (docs.empty()) throw ArgumentError("build_prompt: no documents");
  if (query.empty()) throw ArgumentError("build_prompt: empty query");
  validate_passages(docs);

  PromptLayout layout;
  layout.template_id = std::string(template_id);
  layout.tokens.push_back(spec.bos());
  for (const auto& d : docs) {
    const auto ids = spec.tokenize(d.text);
    if (ids.empty()) throw DatasetError("passage " + d.id + " tokenizes to nothing");
    const std::size_t begin = layout.tokens.size();
    layout.tokens.insert(layout.tokens.end(), ids.begin(), ids.end());
    layout.doc_spans.push_back({d.id, {begin, layout.tokens.size()}});
    layout.tokens.push_back(spec.sep());
  }
  const auto q = spec.tokenize(query);
  if (q.empty()) throw ArgumentError("build_prompt: query tokenizes to nothing");
  const std::size_t qbegin = layout.tokens.size();
  layout.tokens.insert(layout.tokens.end(), q.begin(), q.end());
  layout.query_span = {qbegin, layout.tokens.size()};
  layout.tokens.push_back(spec.sep());

  if (max_seq_len && layout.tokens.size() > *max_seq_len) {
    throw ContextOverflowError(fmt::format("prompt needs {} tokens but only {} are available",
                                           layout.tokens.size(), *max_seq_len));
  }
  return layout;
}

std::optional<RecoveredLayout> recover_layout(const TokenizerSpec& spec,
                                              std::span<const TokenId> tokens) {
  if (tokens.empty() || tokens[0] != spec.bos()) return std::nullopt;
  std::vector<std::size_t> seps;
  for (std::size_t i = 1; i < tokens.size(); ++i) {
    if (tokens[i] == spec.sep()) seps.push_back(i);
  }
  if (seps.size() < 2) return std::nullopt;
  RecoveredLayout out;
  out.terminal = seps.back();
  out.generated = {out.terminal + 1, tokens.size()};
  out.query = {seps[seps.size() - 2] + 1, out.terminal};
  if (out.query.empty()) return std::nullopt;
  std::size_t begin = 1;
  for (std::size_t i = 0; i + 1 < seps.size(); ++i) {
    if (seps[i] == begin) return std::nullopt;  // empty document
    out.docs.push_back({begin, seps[i]});
    begin = seps[i] + 1;
  }
  return out;
}

std::string render_prompt_text(std::span<const Passage> docs, std::string_view query) {
  std::string out;
  for (const auto& d : docs) out += fmt::format("[{}] {}\n\n", d.id, d.text);
  out += fmt::format("Query: {}\n", query);
  return out;
}

std::vector<Passage> chunk_context(const TokenizerSpec& spec, std::string_view long_text,
                                   const ChunkOptions& options) {
  if (long_text.empty()) throw ArgumentError("chunk_context: empty text");
  if (options.budget && *options.budget < 1) throw ArgumentError("chunk_context: budget must be >= 1");
  if (!std::is_sorted(options.boundaries.begin(), options.boundaries.end())) {
    throw ArgumentError("chunk_context: boundaries must be sorted");
  }

  std::vector<std::size_t> cuts{0};
  for (auto b : options.boundaries) {
    if (b == 0 || b >= long_text.size() || b == cuts.back()) {
      throw ArgumentError(fmt::format("chunk_context: boundary {} yields a zero-length chunk", b));
    }
    cuts.push_back(b);
  }
  cuts.push_back(long_text.size());

  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + 1 < cuts.size(); ++s) {
    starts.push_back(cuts[s]);
    if (!options.budget) continue;
    const auto segment = long_text.substr(cuts[s], cuts[s + 1] - cuts[s]);
    const auto pieces = spec.tokenize_with_offsets(segment);
    for (std::size_t i = *options.budget; i < pieces.size(); i += *options.budget) {
      starts.push_back(cuts[s] + pieces[i].begin);
    }
  }

  std::vector<Passage> out;
  for (std::size_t i = 0; i < starts.size(); ++i) {
    const std::size_t end = i + 1 < starts.size() ? starts[i + 1] : long_text.size();
    out.push_back({fmt::format("{}{}", options.id_prefix, i),
                   std::string(long_text.substr(starts[i], end - starts[i]))});
  }
  return out;
}

std::vector<std::size_t> boundaries_at(std::string_view text, std::string_view delimiter) {
  std::vector<std::size_t> out;
  if (delimiter.empty()) return out;
  for (auto pos = text.find(delimiter, 1); pos != std::string_view::npos;
       pos = text.find(delimiter, pos + delimiter.size())) {
    out.push_back(pos);
  }
  return out;
}

}  // namespace qrkit
