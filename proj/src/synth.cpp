#include "qrkit/synth.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"
#include "qrkit/rng.hpp"

namespace qrkit {

using nlohmann::json;

void spread_mass(std::span<float> row, std::span<const std::size_t> positions, double mass) {
  if (positions.empty()) return;
  const auto share = static_cast<float>(mass / static_cast<double>(positions.size()));
  double placed = 0.0;
  for (std::size_t i = 0; i + 1 < positions.size(); ++i) {
    row[positions[i]] = share;
    placed += share;
  }
  row[positions.back()] = static_cast<float>(mass - placed);
}

namespace {

void check_tokens(std::span<const TokenId> tokens, const ModelConfig& cfg) {
  if (tokens.empty()) throw LengthError("forward: token sequence is empty");
  if (tokens.size() > cfg.max_seq_len) {
    throw LengthError(fmt::format("forward: sequence length {} exceeds max_seq_len {}",
                                  tokens.size(), cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw VocabError(fmt::format("forward: token id {} at position {} >= vocab_size {}",
                                   tokens[i], i, cfg.vocab_size));
    }
  }
}

void noise_row(std::span<float> row, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> w(row.size());
  double z = 0.0;
  for (auto& x : w) {
    x = -std::log(rng.uniform_open());
    z += x;
  }
  if (z <= 0.0) {
    for (auto& x : row) x = static_cast<float>(1.0 / static_cast<double>(row.size()));
    return;
  }
  for (std::size_t i = 0; i < row.size(); ++i) row[i] = static_cast<float>(w[i] / z);
}

// Positions in [0, q] drawn from `pool` (sorted) and not in `exclude`.
std::vector<std::size_t> positions_upto(const std::vector<std::size_t>& pool, std::size_t q,
                                        const std::set<std::size_t>& exclude) {
  std::vector<std::size_t> out;
  for (auto p : pool) {
    if (p > q) break;
    if (!exclude.count(p)) out.push_back(p);
  }
  return out;
}

ResidualRule parse_residual(const std::string& s) {
  if (s == "other-docs") return ResidualRule::other_docs;
  if (s == "all-positions") return ResidualRule::all_positions;
  throw ParseError("synthetic plan: unknown residual rule " + s);
}

}  // namespace

void SyntheticPlan::validate() const {
  config.validate();
  if (!(mu > 0.0 && mu <= 1.0)) throw ArgumentError("synthetic plan: mu must be in (0, 1]");
  HeadMask unique(planted_heads);  // rejects duplicates
  unique.validate(config);
}

json SyntheticPlan::to_json() const {
  json heads = json::array();
  for (const auto& h : planted_heads) heads.push_back({{"layer", h.layer}, {"head", h.head}});
  return {{"config", config},
          {"planted_heads", heads},
          {"mu", mu},
          {"residual", residual == ResidualRule::other_docs ? "other-docs" : "all-positions"},
          {"noise_seed", noise_seed}};
}

SyntheticPlan SyntheticPlan::from_json(const json& j) {
  SyntheticPlan p;
  p.config = j.at("config").get<ModelConfig>();
  for (const auto& h : j.at("planted_heads")) {
    p.planted_heads.push_back({h.at("layer").get<std::size_t>(), h.at("head").get<std::size_t>()});
  }
  p.mu = j.value("mu", 0.9);
  p.residual = parse_residual(j.value("residual", std::string("other-docs")));
  p.noise_seed = j.value("noise_seed", std::uint64_t{0});
  p.validate();
  return p;
}

SyntheticPlan SyntheticPlan::load(const std::filesystem::path& path) {
  try {
    return from_json(json::parse(read_file(path)));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

SyntheticProvider::SyntheticProvider(SyntheticPlan plan, TokenizerSpec spec)
    : plan_(std::move(plan)), spec_(std::move(spec)) {
  plan_.validate();
  if (plan_.config.vocab_size < spec_.vocab_size()) {
    throw ArgumentError(fmt::format("synthetic plan: vocab_size {} is smaller than the tokenizer's {}",
                                    plan_.config.vocab_size, spec_.vocab_size()));
  }
}

std::unique_ptr<SyntheticProvider> make_synthetic_provider(const ModelConfig& config,
                                                           const SyntheticPlan& plan,
                                                           const TokenizerSpec& spec) {
  SyntheticPlan p = plan;
  p.config = config;
  return std::make_unique<SyntheticProvider>(std::move(p), spec);
}

ForwardResult SyntheticProvider::forward(std::span<const TokenId> tokens, const HeadMask& mask) const {
  const ModelConfig& cfg = plan_.config;
  check_tokens(tokens, cfg);
  mask.validate(cfg);
  const std::size_t n = tokens.size();

  std::vector<std::uint64_t> prefix_hash(n);
  std::uint64_t running = plan_.noise_seed;
  for (std::size_t i = 0; i < n; ++i) {
    running = mix_seed(running, tokens[i]);
    prefix_hash[i] = running;
  }

  // Planted targets, derived from the prompt structure.
  const auto layout = recover_layout(spec_, tokens);
  std::vector<std::size_t> doc_positions, target_positions;
  std::optional<std::size_t> copy_start;
  Span copy_doc;
  if (layout) {
    std::set<TokenId> query_tokens(tokens.begin() + static_cast<std::ptrdiff_t>(layout->query.begin),
                                   tokens.begin() + static_cast<std::ptrdiff_t>(layout->query.end));
    for (const auto& d : layout->docs) {
      bool target = false;
      for (std::size_t p = d.begin; p < d.end; ++p) {
        doc_positions.push_back(p);
        if (query_tokens.count(tokens[p])) {
          target = true;
          if (!copy_start) {
            copy_start = p;
            copy_doc = d;
          }
        }
      }
      if (target) {
        for (std::size_t p = d.begin; p < d.end; ++p) target_positions.push_back(p);
      }
    }
  }
  std::vector<std::size_t> all_positions(n);
  for (std::size_t i = 0; i < n; ++i) all_positions[i] = i;

  auto planted_row = [&](std::span<float> row, std::size_t q, std::vector<std::size_t> targets) {
    const auto& residual_pool =
        plan_.residual == ResidualRule::other_docs ? doc_positions : all_positions;
    const std::set<std::size_t> target_set(targets.begin(), targets.end());
    if (targets.empty()) {
      auto spread = positions_upto(residual_pool, q, {});
      if (spread.empty()) spread = positions_upto(all_positions, q, {});
      spread_mass(row, spread, 1.0);
      return;
    }
    const auto rest = positions_upto(residual_pool, q, target_set);
    if (rest.empty()) {
      spread_mass(row, targets, 1.0);
      return;
    }
    spread_mass(row, targets, plan_.mu);
    spread_mass(row, rest, 1.0 - plan_.mu);
  };

  ForwardResult out;
  out.attention = AttentionTensor(cfg.n_layers, cfg.n_heads, n);
  const HeadMask planted(plan_.planted_heads);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      const HeadId id{l, h};
      out.attention.set_masked(id, mask.contains(id));
      const bool is_planted = planted.contains(id);
      const std::uint64_t head_seed = flat_index(id, cfg.n_heads) + 1;
      for (std::size_t q = 0; q < n; ++q) {
        auto row = out.attention.row(l, h, q);
        if (is_planted && layout && layout->query.contains(q)) {
          planted_row(row, q, positions_upto(target_positions, q, {}));
        } else if (is_planted && layout && q >= layout->terminal) {
          std::vector<std::size_t> src;
          if (copy_start) {
            const std::size_t c = *copy_start + (q - layout->terminal);
            if (copy_doc.contains(c)) src.push_back(c);
          }
          planted_row(row, q, std::move(src));
        } else {
          noise_row(row, mix_seed(prefix_hash[q], head_seed));
        }
      }
    }
  }

  // Answer readout: unmasked planted heads copy the tokens they attend to.
  out.logits.seq_len = n;
  out.logits.vocab_size = cfg.vocab_size;
  out.logits.values.assign(n * cfg.vocab_size, 0.0f);
  if (layout) {
    for (std::size_t q = layout->terminal; q < n; ++q) {
      std::vector<double> acc(cfg.vocab_size, 0.0);
      for (const auto& id : plan_.planted_heads) {
        if (mask.contains(id)) continue;
        const auto row = out.attention.row(id.layer, id.head, q);
        for (std::size_t k = 0; k <= q; ++k) acc[tokens[k]] += row[k];
      }
      auto lrow = out.logits.row(q);
      for (std::size_t v = 0; v < cfg.vocab_size; ++v) lrow[v] = static_cast<float>(acc[v]);
    }
  }
  return out;
}

BiasInjectingProvider::BiasInjectingProvider(const AttentionProvider& base, TokenizerSpec spec,
                                             std::vector<double> doc_weights, double strength)
    : base_(base), spec_(std::move(spec)), doc_weights_(std::move(doc_weights)), strength_(strength) {
  if (doc_weights_.empty()) throw ArgumentError("bias provider: no document weights");
  for (double w : doc_weights_) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ArgumentError("bias provider: weights must be >= 0");
  }
  if (!(strength_ >= 0.0 && strength_ < 1.0)) throw ArgumentError("bias provider: strength must be in [0, 1)");
}

ForwardResult BiasInjectingProvider::forward(std::span<const TokenId> tokens, const HeadMask& mask) const {
  ForwardResult out = base_.forward(tokens, mask);
  const auto layout = recover_layout(spec_, tokens);
  if (!layout) return out;

  std::vector<std::pair<std::size_t, double>> bias;  // (position, weight), ascending positions
  for (std::size_t i = 0; i < layout->docs.size(); ++i) {
    const Span d = layout->docs[i];
    const double w = doc_weights_[i % doc_weights_.size()] / static_cast<double>(d.size());
    for (std::size_t p = d.begin; p < d.end; ++p) bias.emplace_back(p, w);
  }
  const ModelConfig& cfg = config();
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    for (std::size_t h = 0; h < cfg.n_heads; ++h) {
      for (std::size_t q = 0; q < tokens.size(); ++q) {
        double total = 0.0;
        for (const auto& [p, w] : bias) {
          if (p > q) break;
          total += w;
        }
        if (total <= 0.0) continue;
        auto row = out.attention.row(l, h, q);
        for (auto& x : row) x = static_cast<float>((1.0 - strength_) * x);
        for (const auto& [p, w] : bias) {
          if (p > q) break;
          row[p] = static_cast<float>(row[p] + strength_ * w / total);
        }
      }
    }
  }
  return out;
}

ModelWeights craft_copy_weights(const TokenizerSpec& spec, std::string_view needle,
                                std::size_t max_seq_len, std::uint64_t seed) {
  const auto ids = spec.tokenize(needle);
  if (ids.empty()) throw ArgumentError("craft_copy_weights: empty needle");
  if (std::set<TokenId>(ids.begin(), ids.end()).size() != ids.size()) {
    throw ArgumentError("craft_copy_weights: needle tokens must be distinct");
  }
  const std::size_t V = spec.vocab_size();

  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.n_heads = 2;
  cfg.d_head = V;
  cfg.d_model = 2 * V;
  cfg.d_ff = 4;
  cfg.vocab_size = V;
  cfg.max_seq_len = max_seq_len;
  cfg.rope_base.reset();
  ModelWeights w = ModelWeights::zeros(cfg);

  // Balanced one-hot embeddings keep layer norm a pure rescaling.
  for (std::size_t t = 0; t < V; ++t) {
    w.tok_embed(t, t) = 1.0f;
    w.tok_embed(t, V + t) = -1.0f;
  }
  constexpr float kSharpness = 2.0f;
  auto& L = w.layers[0];
  for (std::size_t t = 0; t < V; ++t) {
    L.wq(t, t) = kSharpness;
    L.wv(t, t) = 1.0f;
    L.wo(t, t) = 1.0f;
    L.wo(t, V + t) = -1.0f;
  }
  // Key code of needle token i is the token that precedes it in the answer.
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId prev = i == 0 ? spec.sep() : ids[i - 1];
    L.wk(ids[i], prev) = 1.0f;
  }

  Rng rng(seed);
  const double qk_scale = 1.0 / std::sqrt(static_cast<double>(cfg.d_model));
  for (std::size_t r = 0; r < cfg.d_model; ++r) {
    for (std::size_t c = V; c < 2 * V; ++c) {
      L.wq(r, c) = static_cast<float>(rng.normal() * qk_scale * 4.0);
      L.wk(r, c) = static_cast<float>(rng.normal() * qk_scale * 4.0);
      L.wv(r, c) = static_cast<float>(rng.normal() * qk_scale);
    }
  }
  for (std::size_t r = V; r < 2 * V; ++r) {
    for (std::size_t c = 0; c < cfg.d_model; ++c) L.wo(r, c) = static_cast<float>(rng.normal() * 0.01);
  }
  for (std::size_t t = 0; t < V; ++t) w.unembed(t, t) = 1.0f;
  w.validate();
  return w;
}

}  // namespace qrkit
