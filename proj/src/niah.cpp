#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/parallel.hpp"
#include "qrkit/rng.hpp"
#include "qrkit/synth.hpp"

namespace qrkit {

namespace {

std::size_t count_runs(std::span<const TokenId> hay, std::span<const TokenId> needle) {
  if (needle.empty() || hay.size() < needle.size()) return 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i + needle.size() <= hay.size(); ++i) {
    if (std::equal(needle.begin(), needle.end(), hay.begin() + static_cast<std::ptrdiff_t>(i))) ++n;
  }
  return n;
}

struct Piece {
  std::string text;
  std::size_t tokens = 0;
  std::vector<std::size_t> starts;  // byte offset of each token
};

}  // namespace

DetectionExample gen_niah(const TokenizerSpec& spec, const NiahSpec& niah) {
  const auto needle_ids = spec.tokenize(niah.needle);
  const auto question_ids = spec.tokenize(niah.question);
  if (needle_ids.empty()) throw ArgumentError("gen_niah: empty needle");
  if (question_ids.empty()) throw ArgumentError("gen_niah: empty question");
  if (!(niah.depth >= 0.0 && niah.depth <= 1.0)) throw ArgumentError("gen_niah: depth must be in [0, 1]");
  const std::size_t minimum = 3 + question_ids.size() + needle_ids.size();
  if (niah.context_length < minimum) {
    throw ArgumentError(fmt::format("gen_niah: context length {} cannot hold needle and question ({} tokens)",
                                    niah.context_length, minimum));
  }
  if (count_runs(question_ids, needle_ids) > 0) throw ArgumentError("gen_niah: question contains the needle");

  std::vector<std::vector<TokenPiece>> pool_pieces;
  for (const auto& p : niah.haystack) {
    auto pieces = spec.tokenize_with_offsets(p.text);
    std::vector<TokenId> ids;
    for (const auto& t : pieces) ids.push_back(t.id);
    if (count_runs(ids, needle_ids) > 0) {
      throw ArgumentError(fmt::format("gen_niah: distractor '{}' contains the needle", p.id));
    }
    pool_pieces.push_back(std::move(pieces));
  }

  // Fill distractors until the token budget is spent.
  std::size_t remaining = niah.context_length - question_ids.size() - 2 - needle_ids.size();
  std::vector<Piece> docs;
  if (remaining >= 2) {
    std::vector<std::size_t> order;
    for (std::size_t i = 0; i < niah.haystack.size(); ++i) {
      if (!pool_pieces[i].empty()) order.push_back(i);
    }
    if (order.empty()) throw ArgumentError("gen_niah: distractor pool is empty");
    Rng rng(niah.seed);
    rng.shuffle(order);
    for (std::size_t k = 0; remaining >= 2; ++k) {
      const std::size_t src = order[k % order.size()];
      const auto& pieces = pool_pieces[src];
      const std::size_t take = std::min(pieces.size(), remaining - 1);
      Piece piece;
      piece.tokens = take;
      piece.text = niah.haystack[src].text.substr(0, pieces[take - 1].end);
      for (std::size_t t = 0; t < take; ++t) piece.starts.push_back(pieces[t].begin);
      docs.push_back(std::move(piece));
      remaining -= take + 1;
    }
  }

  std::size_t total = 0;
  for (const auto& d : docs) total += d.tokens;
  const auto unit = static_cast<std::size_t>(std::llround(niah.depth * static_cast<double>(total)));
  const bool words = spec.mode() == TokenizerMode::word;
  std::size_t host = 0;
  if (docs.empty()) {
    docs.push_back(Piece{niah.needle, 0, {}});
  } else if (unit >= total) {
    host = docs.size() - 1;
    docs[host].text += (words ? " " : "") + niah.needle;
  } else {
    std::size_t cum = 0;
    while (cum + docs[host].tokens <= unit) cum += docs[host++].tokens;
    auto& d = docs[host];
    const std::size_t at = d.starts[unit - cum];
    d.text.insert(at, niah.needle + (words ? " " : ""));
  }

  DetectionExample ex;
  ex.query = niah.question;
  ex.answer = niah.needle;
  std::size_t occurrences = 0;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    const std::string id = fmt::format("hay-{}", i);
    occurrences += count_runs(spec.tokenize(docs[i].text), needle_ids);
    ex.docs.push_back({id, std::move(docs[i].text)});
    if (i == host) ex.gold_ids.push_back(id);
  }
  if (occurrences != 1) {
    throw ArgumentError(fmt::format("gen_niah: needle occurs {} times after splicing", occurrences));
  }
  return ex;
}

std::vector<Passage> word_salad_pool(const TokenizerSpec& spec, const std::vector<std::string>& excluded,
                                     std::size_t n_passages, std::size_t min_words,
                                     std::size_t max_words, std::uint64_t seed) {
  if (min_words == 0 || max_words < min_words) throw ArgumentError("word_salad_pool: bad word-count range");
  std::vector<std::string> vocab;
  const std::set<std::string> skip(excluded.begin(), excluded.end());
  if (spec.mode() == TokenizerMode::word) {
    for (auto& w : spec.words()) {
      if (!skip.count(w)) vocab.push_back(std::move(w));
    }
  } else {
    for (char c = 'a'; c <= 'z'; ++c) {
      std::string w(1, c);
      if (!skip.count(w)) vocab.push_back(w);
    }
  }
  if (vocab.empty()) throw ArgumentError("word_salad_pool: no words left after exclusion");

  Rng rng(seed);
  std::vector<Passage> out;
  for (std::size_t i = 0; i < n_passages; ++i) {
    const std::size_t n = min_words + rng.below(max_words - min_words + 1);
    std::string text;
    for (std::size_t w = 0; w < n; ++w) {
      if (w) text += ' ';
      text += vocab[rng.below(vocab.size())];
    }
    out.push_back({fmt::format("pool-{}", i), std::move(text)});
  }
  return out;
}

std::vector<std::string> words_of(const std::vector<std::string>& texts) {
  std::vector<std::string> out;
  for (const auto& t : texts) {
    std::istringstream in(t);
    for (std::string w; in >> w;) out.push_back(std::move(w));
  }
  return out;
}

void NiahGrid::validate() const {
  if (context_lengths.empty() || depths.empty()) throw ArgumentError("niah grid: empty axis");
  if (trials < 1) throw ArgumentError("niah grid: trials must be >= 1");
  if (!std::is_sorted(context_lengths.begin(), context_lengths.end()) ||
      !std::is_sorted(depths.begin(), depths.end())) {
    throw ArgumentError("niah grid: axes must be sorted");
  }
  for (double d : depths) {
    if (!(d >= 0.0 && d <= 1.0)) throw ArgumentError("niah grid: depths must be in [0, 1]");
  }
}

double NiahGridResult::mean() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& row : accuracy) {
    for (double a : row) {
      sum += a;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

std::string NiahGridResult::to_csv() const {
  std::string out = "context_length";
  for (double d : grid.depths) out += fmt::format(",{}", d);
  out += '\n';
  for (std::size_t i = 0; i < grid.context_lengths.size(); ++i) {
    out += fmt::format("{}", grid.context_lengths[i]);
    for (double a : accuracy[i]) out += fmt::format(",{}", a);
    out += '\n';
  }
  return out;
}

double niah_chance_level(const TokenizerSpec& spec) { return 1.0 / static_cast<double>(spec.vocab_size()); }

DetectionExample niah_trial_example(const TokenizerSpec& spec, const NiahTask& task,
                                    std::size_t context_length, double depth, std::size_t cell,
                                    std::size_t trial) {
  NiahSpec s;
  s.needle = task.needle;
  s.question = task.question;
  s.haystack = task.haystack;
  s.context_length = context_length;
  s.depth = depth;
  s.seed = mix_seed(mix_seed(task.seed, cell), trial);
  return gen_niah(spec, s);
}

NiahGridResult run_niah_grid(const AttentionProvider& provider, const TokenizerSpec& spec,
                             const NiahTask& task, const NiahGrid& grid, const HeadMask& mask,
                             std::size_t jobs, std::string_view template_id) {
  grid.validate();
  const ModelConfig& cfg = provider.config();
  mask.validate(cfg);
  for (auto len : grid.context_lengths) {
    if (len > cfg.max_seq_len) {
      throw ArgumentError(fmt::format("niah grid: context length {} exceeds max_seq_len {}", len, cfg.max_seq_len));
    }
  }
  const auto needle_ids = spec.tokenize(task.needle);
  const std::size_t n_depths = grid.depths.size();
  const std::size_t n_cells = grid.context_lengths.size() * n_depths;

  const auto hits = parallel_map(n_cells * grid.trials, jobs, [&](std::size_t idx) -> int {
    const std::size_t cell = idx / grid.trials, trial = idx % grid.trials;
    const std::size_t len = grid.context_lengths[cell / n_depths];
    const double depth = grid.depths[cell % n_depths];
    try {
      const auto ex = niah_trial_example(spec, task, len, depth, cell, trial);
      const auto layout = build_prompt(spec, ex.docs, ex.query, template_id, cfg.max_seq_len);
      const auto trace = greedy_decode_with_trace(provider, layout.tokens, needle_ids.size(), mask, spec.eos());
      return trace.generated == needle_ids ? 1 : 0;
    } catch (const std::exception& e) {
      throw DecodeError(fmt::format("niah cell (length={}, depth={}) trial {}: {}", len, depth, trial, e.what()));
    }
  });

  NiahGridResult result;
  result.grid = grid;
  result.accuracy.assign(grid.context_lengths.size(), std::vector<double>(n_depths, 0.0));
  for (std::size_t cell = 0; cell < n_cells; ++cell) {
    int ok = 0;
    for (std::size_t t = 0; t < grid.trials; ++t) ok += hits[cell * grid.trials + t];
    result.accuracy[cell / n_depths][cell % n_depths] =
        static_cast<double>(ok) / static_cast<double>(grid.trials);
  }
  return result;
}

}  // namespace qrkit
