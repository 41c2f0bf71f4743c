#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/retriever.hpp"

namespace qrkit {

struct Judgment {
  std::string query_id;
  std::map<std::string, int> grades;  // passage id -> grade >= 0

  std::size_t n_relevant() const;
};

/// `query_id \t passage_id \t grade`, one judgment per line. Blank lines,
/// '#' comments and a leading header row are skipped.
std::map<std::string, Judgment> load_qrels_tsv(const std::filesystem::path& path);
std::map<std::string, Judgment> parse_qrels_tsv(std::string_view text, std::string_view origin = "qrels");

double recall_at_k(std::span<const std::string> ranking, const Judgment& judg, std::size_t k);
double ndcg_at_k(std::span<const std::string> ranking, const Judgment& judg, std::size_t k);
double recall_at_k(const RankedList& ranked, const Judgment& judg, std::size_t k);
double ndcg_at_k(const RankedList& ranked, const Judgment& judg, std::size_t k);

double aggregate_mean(std::span<const double> values);

enum class MetricKind { recall, ndcg };

struct MetricSpec {
  MetricKind kind = MetricKind::recall;
  std::size_t k = 10;

  std::string name() const;  // "recall@5", "ndcg@10"
  double evaluate(std::span<const std::string> ranking, const Judgment& judg) const;
  bool operator==(const MetricSpec&) const = default;
};

MetricSpec parse_metric_spec(std::string_view text);

struct QueryMetrics {
  std::string query_id;
  std::vector<double> values;  // parallel to EvalReport::metrics
};

struct EvalReport {
  std::vector<MetricSpec> metrics;
  std::vector<QueryMetrics> per_query;  // ranking order
  std::vector<double> means;

  nlohmann::json to_json() const;
  std::string to_text() const;
};

/// Joins rankings to judgments on query_id, falling back to the query text
/// for rankings without an id.
EvalReport evaluate(std::span<const RankedList> rankings, const std::map<std::string, Judgment>& qrels,
                    std::span<const MetricSpec> metrics);

}  // namespace qrkit
