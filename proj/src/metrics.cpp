#include "qrkit/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <functional>
#include <set>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"

namespace qrkit {

using nlohmann::json;

std::size_t Judgment::n_relevant() const {
  return static_cast<std::size_t>(
      std::count_if(grades.begin(), grades.end(), [](const auto& kv) { return kv.second > 0; }));
}

std::map<std::string, Judgment> parse_qrels_tsv(std::string_view text, std::string_view origin) {
  std::map<std::string, Judgment> out;
  std::size_t line_no = 0;
  for (const auto& raw : split(text, '\n')) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    auto fields = split(line, '\t');
    if (fields.size() != 3) {
      throw ParseError(fmt::format("{}:{}: expected 3 tab-separated fields, got {}", origin, line_no, fields.size()));
    }
    for (auto& f : fields) f = trim(f);
    if (out.empty() && fields[0] == "query_id") continue;
    int grade = 0;
    const auto& g = fields[2];
    auto [ptr, ec] = std::from_chars(g.data(), g.data() + g.size(), grade);
    if (ec != std::errc() || ptr != g.data() + g.size() || grade < 0) {
      throw ParseError(fmt::format("{}:{}: grade must be a non-negative integer, got '{}'", origin, line_no, g));
    }
    auto& j = out[fields[0]];
    j.query_id = fields[0];
    if (!j.grades.emplace(fields[1], grade).second) {
      throw ParseError(fmt::format("{}:{}: duplicate judgment for ({}, {})", origin, line_no, fields[0], fields[1]));
    }
  }
  return out;
}

std::map<std::string, Judgment> load_qrels_tsv(const std::filesystem::path& path) {
  return parse_qrels_tsv(read_file(path), path.string());
}

namespace {

void check_ranking(std::span<const std::string> ranking, std::size_t k) {
  if (k < 1) throw ArgumentError("metric: k must be >= 1");
  std::set<std::string_view> seen;
  for (const auto& id : ranking) {
    if (!seen.insert(id).second) throw ArgumentError("metric: ranking repeats passage " + id);
  }
}

int grade_of(const Judgment& judg, const std::string& id) {
  auto it = judg.grades.find(id);
  return it == judg.grades.end() ? 0 : it->second;
}

}  // namespace

double recall_at_k(std::span<const std::string> ranking, const Judgment& judg, std::size_t k) {
  check_ranking(ranking, k);
  const std::size_t relevant = judg.n_relevant();
  if (relevant == 0) throw MetricError("recall: no relevant passages for query " + judg.query_id);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    if (grade_of(judg, ranking[i]) > 0) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(relevant);
}

double ndcg_at_k(std::span<const std::string> ranking, const Judgment& judg, std::size_t k) {
  check_ranking(ranking, k);
  auto gain = [](int g) { return std::exp2(static_cast<double>(g)) - 1.0; };
  auto discount = [](std::size_t rank) { return std::log2(static_cast<double>(rank) + 1.0); };

  std::vector<int> ideal;
  for (const auto& [id, g] : judg.grades) ideal.push_back(g);
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  double idcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ideal.size()); ++i) idcg += gain(ideal[i]) / discount(i + 1);
  if (idcg <= 0.0) throw MetricError("ndcg: all judgments are zero for query " + judg.query_id);

  double dcg = 0.0;
  for (std::size_t i = 0; i < std::min(k, ranking.size()); ++i) {
    dcg += gain(grade_of(judg, ranking[i])) / discount(i + 1);
  }
  return dcg / idcg;
}

double recall_at_k(const RankedList& ranked, const Judgment& judg, std::size_t k) {
  const auto ids = ranked.ids();
  return recall_at_k(std::span<const std::string>(ids), judg, k);
}

double ndcg_at_k(const RankedList& ranked, const Judgment& judg, std::size_t k) {
  const auto ids = ranked.ids();
  return ndcg_at_k(std::span<const std::string>(ids), judg, k);
}

double aggregate_mean(std::span<const double> values) {
  if (values.empty()) throw ArgumentError("aggregate: no values");
  double sum = 0.0;
  for (double v : values) sum += v;
  return sum / static_cast<double>(values.size());
}

std::string MetricSpec::name() const {
  return fmt::format("{}@{}", kind == MetricKind::recall ? "recall" : "ndcg", k);
}

double MetricSpec::evaluate(std::span<const std::string> ranking, const Judgment& judg) const {
  return kind == MetricKind::recall ? recall_at_k(ranking, judg, k) : ndcg_at_k(ranking, judg, k);
}

MetricSpec parse_metric_spec(std::string_view text) {
  const std::string s = trim(text);
  const auto at = s.find('@');
  if (at == std::string::npos) throw ArgumentError("metric '" + s + "': expected name@k");
  MetricSpec m;
  std::string name = s.substr(0, at);
  std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
  if (name == "recall") {
    m.kind = MetricKind::recall;
  } else if (name == "ndcg") {
    m.kind = MetricKind::ndcg;
  } else {
    throw ArgumentError("metric '" + s + "': unknown name");
  }
  const std::string num = s.substr(at + 1);
  auto [ptr, ec] = std::from_chars(num.data(), num.data() + num.size(), m.k);
  if (ec != std::errc() || ptr != num.data() + num.size() || m.k < 1) {
    throw ArgumentError("metric '" + s + "': k must be a positive integer");
  }
  return m;
}

json EvalReport::to_json() const {
  json names = json::array();
  for (const auto& m : metrics) names.push_back(m.name());
  json rows = json::array();
  for (const auto& q : per_query) {
    json vals = json::object();
    for (std::size_t i = 0; i < metrics.size(); ++i) vals[metrics[i].name()] = q.values[i];
    rows.push_back({{"query_id", q.query_id}, {"metrics", vals}});
  }
  json mean = json::object();
  for (std::size_t i = 0; i < metrics.size(); ++i) mean[metrics[i].name()] = means[i];
  return {{"metrics", names}, {"n_queries", per_query.size()}, {"per_query", rows}, {"mean", mean}};
}

std::string EvalReport::to_text() const {
  std::size_t w0 = std::string_view("query_id").size();
  for (const auto& q : per_query) w0 = std::max(w0, q.query_id.size());
  w0 = std::max<std::size_t>(w0, 4);
  std::vector<std::size_t> widths;
  for (const auto& m : metrics) widths.push_back(std::max<std::size_t>(m.name().size(), 8));

  auto row = [&](std::string_view label, const std::vector<std::string>& cells) {
    std::string line = fmt::format("{:<{}}", label, w0);
    for (std::size_t i = 0; i < cells.size(); ++i) line += fmt::format("  {:>{}}", cells[i], widths[i]);
    return line + '\n';
  };
  auto cells = [&](const std::vector<double>& v) {
    std::vector<std::string> out;
    for (double x : v) out.push_back(fmt::format("{:.4f}", x));
    return out;
  };
  std::vector<std::string> header;
  for (const auto& m : metrics) header.push_back(m.name());
  std::string out = row("query_id", header);
  for (const auto& q : per_query) out += row(q.query_id, cells(q.values));
  out += row("mean", cells(means));
  return out;
}

EvalReport evaluate(std::span<const RankedList> rankings, const std::map<std::string, Judgment>& qrels,
                    std::span<const MetricSpec> metrics) {
  if (metrics.empty()) throw ArgumentError("eval: no metrics requested");
  if (rankings.empty()) throw ArgumentError("eval: no rankings");
  std::vector<std::string> missing;
  for (const auto& r : rankings) {
    const std::string key = r.query_id.value_or(r.query);
    if (!qrels.count(key)) missing.push_back(key);
  }
  if (missing.size() == rankings.size()) {
    throw DatasetError("eval: no ranking query id matches the judgments");
  }
  if (!missing.empty()) {
    std::string list;
    for (const auto& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw DatasetError("eval: missing judgments for queries: " + list);
  }

  EvalReport report;
  report.metrics.assign(metrics.begin(), metrics.end());
  std::vector<std::vector<double>> columns(metrics.size());
  for (const auto& r : rankings) {
    const std::string key = r.query_id.value_or(r.query);
    const auto ids = r.ids();
    QueryMetrics q{key, {}};
    for (std::size_t i = 0; i < metrics.size(); ++i) {
      const double v = metrics[i].evaluate(ids, qrels.at(key));
      q.values.push_back(v);
      columns[i].push_back(v);
    }
    report.per_query.push_back(std::move(q));
  }
  for (const auto& c : columns) report.means.push_back(aggregate_mean(c));
  return report;
}

}  // namespace qrkit
