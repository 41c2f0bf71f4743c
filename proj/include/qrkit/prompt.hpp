#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/tokenizer.hpp"

namespace qrkit {

struct Passage {
  std::string id;
  std::string text;

  bool operator==(const Passage&) const = default;
};

/// Unique non-empty ids, non-empty text.
void validate_passages(std::span<const Passage> docs);

Passage passage_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Passage& p);
std::vector<Passage> load_passages_jsonl(const std::filesystem::path& path);

/// Half-open token range.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool empty() const noexcept { return end <= begin; }
  bool contains(std::size_t i) const noexcept { return i >= begin && i < end; }
  bool operator==(const Span&) const = default;
};

struct DocSpan {
  std::string id;
  Span span;

  bool operator==(const DocSpan&) const = default;
};

/// Documents first, then the query: [bos] (doc [sep])* query [sep].
inline constexpr std::string_view kDefaultTemplate = "qrkit-docs-then-query-v1";

struct PromptLayout {
  std::vector<TokenId> tokens;
  std::vector<DocSpan> doc_spans;  // input order
  Span query_span;                 // user query tokens only, no scaffold
  std::string template_id;

  /// Throws KeyError for an unknown id.
  const Span& doc_span(std::string_view id) const;
  bool has_doc(std::string_view id) const;

  /// Spans disjoint, in range, query after every document.
  void validate() const;

  bool operator==(const PromptLayout&) const = default;
};

PromptLayout build_prompt(const TokenizerSpec& spec, std::span<const Passage> docs,
                          std::string_view query, std::string_view template_id = kDefaultTemplate,
                          std::optional<std::size_t> max_seq_len = std::nullopt);

/// Inverse of build_prompt on token ids alone, tolerating tokens generated
/// after the terminal separator. nullopt when the sequence does not follow
/// the default template.
struct RecoveredLayout {
  std::vector<Span> docs;
  Span query;
  std::size_t terminal = 0;  // index of the separator closing the query
  Span generated;            // tokens after the terminal separator
};
std::optional<RecoveredLayout> recover_layout(const TokenizerSpec& spec,
                                              std::span<const TokenId> tokens);

/// Plain-text rendering of a prompt for consumption outside the library.
std::string render_prompt_text(std::span<const Passage> docs, std::string_view query);

struct ChunkOptions {
  std::vector<std::size_t> boundaries;  // sorted byte offsets where a new chunk starts
  std::optional<std::size_t> budget;    // max tokens per chunk
  std::string id_prefix = "chunk-";
};

/// Splits at explicit boundaries first, then greedily by token budget inside
/// each segment. Chunk texts concatenate back to `long_text` exactly.
std::vector<Passage> chunk_context(const TokenizerSpec& spec, std::string_view long_text,
                                   const ChunkOptions& options);

/// Byte offsets of every occurrence of `delimiter` except at offset 0, for
/// splitting on structural markers such as chapter headings.
std::vector<std::size_t> boundaries_at(std::string_view text, std::string_view delimiter);

}  // namespace qrkit
