#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/head_score.hpp"

namespace qrkit {

struct CalibrationConfig {
  bool enabled = true;
  std::string null_query = "N/A";

  void validate() const;
};

struct PassageScore {
  std::string passage_id;
  double raw = 0.0;
  std::optional<double> baseline;
  double final_score = 0.0;
};

struct RankedList {
  std::string query;
  std::optional<std::string> query_id;
  std::vector<PassageScore> entries;  // final score descending, ties in input order
  std::string headset;                // provenance of the head set used

  std::vector<std::string> ids() const;
};

/// {"query", "query_id"?, "ranking": [{"id", "raw", "baseline"?, "final"}]}
nlohmann::json to_json(const RankedList& ranked);
RankedList ranked_from_json(const nlohmann::json& j);

/// Per-passage mean QRscore over `headset`, from one forward pass over
/// {docs, query}; with calibration a second pass over {docs, null query}
/// supplies the baseline that is subtracted.
RankedList score_passages(const AttentionProvider& provider, const TokenizerSpec& spec,
                          const HeadSet& headset, std::string_view query,
                          std::span<const Passage> docs, const CalibrationConfig& calib = {},
                          std::string_view template_id = kDefaultTemplate);

/// Same scoring over a first-stage ordering; the input order only breaks ties.
RankedList rerank(const AttentionProvider& provider, const TokenizerSpec& spec,
                  const HeadSet& headset, std::string_view query,
                  std::span<const Passage> first_stage, const CalibrationConfig& calib = {},
                  std::string_view template_id = kDefaultTemplate);

struct ReducedContext {
  std::vector<Passage> passages;  // original document order
  std::string prompt;
};

ReducedContext select_top_k_context(const RankedList& ranked, std::span<const Passage> docs,
                                    std::size_t k);

}  // namespace qrkit
