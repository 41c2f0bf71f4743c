#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/attention.hpp"
#include "qrkit/prompt.hpp"

namespace qrkit {

/// One (query, documents, gold documents) triple, plus the needle answer
/// when the example is used for copy-paste scoring.
struct DetectionExample {
  std::string query;
  std::vector<Passage> docs;
  std::vector<std::string> gold_ids;
  std::optional<std::string> answer;
  std::optional<std::string> query_id;

  void validate() const;
};

DetectionExample example_from_json(const nlohmann::json& j);
nlohmann::json to_json(const DetectionExample& e);

struct DetectionDataset {
  std::string name;
  std::vector<DetectionExample> examples;

  void validate() const;
  /// One example per line; the dataset name is the file stem.
  static DetectionDataset load(const std::filesystem::path& path);
  std::string to_jsonl() const;
};

enum class HeadMetric { qrscore, copy_paste };
std::string to_string(HeadMetric m);
HeadMetric parse_metric(std::string_view s);

/// Dense per-head scores, indexed layer * n_heads + head.
struct HeadScoreTable {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<double> scores;
  HeadMetric metric = HeadMetric::qrscore;
  std::string dataset_name;
  std::size_t n_examples = 0;

  double score(HeadId id) const { return scores.at(flat_index(id, n_heads)); }
  void validate() const;
};

/// Ordered selection of heads, best first.
struct HeadSet {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<HeadId> heads;
  std::vector<double> scores;  // parallel to heads when cut from a table
  std::string provenance;

  std::size_t k() const noexcept { return heads.size(); }
  double fraction_of_total() const {
    return static_cast<double>(heads.size()) / static_cast<double>(n_layers * n_heads);
  }
  HeadMask as_mask() const { return HeadMask(heads); }
  void check_shape(const ModelConfig& config) const;
};

// JSON interchange: {"metric", "dataset", "n_examples", "n_layers", "n_heads",
// "heads": [{"layer", "head", "score"}]} sorted descending. Head sets carry an
// extra "k" field and list only the selected heads.
nlohmann::json to_json(const HeadScoreTable& table);
HeadScoreTable table_from_json(const nlohmann::json& j);
nlohmann::json to_json(const HeadSet& set, const HeadScoreTable& source);
/// Accepts a head-set file (uses its heads as listed) or a full table (cut to
/// `top_k`, required in that case).
HeadSet headset_from_json(const nlohmann::json& j, std::optional<std::size_t> top_k = std::nullopt);

/// (1/|q|) sum over query rows of the attention mass on the document span.
double qrscore_span(const AttentionTensor& attn, Span query, Span doc, HeadId head);
double qrscore_doc(const AttentionTensor& attn, const PromptLayout& layout, HeadId head,
                   std::string_view doc_id);
/// Sum of qrscore_doc over the gold ids, accumulated in the given order.
double qrscore_query(const AttentionTensor& attn, const PromptLayout& layout, HeadId head,
                     std::span<const std::string> gold_ids);

/// Mean of qrscore_query over the dataset. One forward pass per
/// example, no calibration.
HeadScoreTable qrscore_dataset(const AttentionProvider& provider, const TokenizerSpec& spec,
                               const DetectionDataset& dataset,
                               std::string_view template_id = kDefaultTemplate,
                               std::size_t jobs = 1);

struct CopyStep {
  TokenId token = 0;
  std::vector<std::size_t> argmax_pos;  // per head, flat index
  std::vector<std::uint8_t> copied;     // per head
};

struct CopyTrace {
  std::vector<std::size_t> needle_positions;  // absolute prompt positions of the answer tokens
  std::vector<CopyStep> steps;
  std::vector<double> head_scores;  // |g_h ∩ a| / |a| per head
};

nlohmann::json to_json(const CopyTrace& trace);

/// |g_h ∩ a| / |a|.
double copy_fraction(std::size_t copied, std::size_t answer_len);

/// A head copies generated token t when its argmax attention at that step
/// lands on a needle position holding t. Each needle position counts once.
CopyTrace trace_copies(const DecodeTrace& decode, std::span<const TokenId> prompt,
                       std::span<const std::size_t> needle_positions);

struct CopyPasteResult {
  HeadScoreTable table;
  std::vector<CopyTrace> traces;
};

/// Greedy-decodes every example (max_new defaults to the answer length) and
/// averages the per-example copy fractions.
CopyPasteResult copy_paste_score(const AttentionProvider& provider, const TokenizerSpec& spec,
                                 const DetectionDataset& dataset,
                                 std::string_view template_id = kDefaultTemplate,
                                 std::optional<std::size_t> max_new = std::nullopt,
                                 std::size_t jobs = 1);

/// Descending score, ties by (layer, head) ascending.
HeadSet rank_and_select(const HeadScoreTable& table, std::size_t k);

std::size_t headset_overlap(const HeadSet& a, const HeadSet& b);

}  // namespace qrkit
