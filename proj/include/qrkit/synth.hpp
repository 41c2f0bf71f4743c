#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "qrkit/head_score.hpp"
#include "qrkit/model.hpp"

namespace qrkit {

// ---------------------------------------------------------------------------
// Needle-in-a-haystack generation

struct NiahSpec {
  std::string needle;    // answer a
  std::string question;  // query q
  std::vector<Passage> haystack;
  std::size_t context_length = 256;  // token budget of the assembled prompt
  double depth = 0.5;                // 0 opens the context, 1 precedes the question
  std::uint64_t seed = 0;
};

/// Distractors drawn from the pool (seeded), the needle spliced in at token
/// round(depth * haystack_tokens). The needle-bearing passage is the only
/// gold id and the needle is the answer.
DetectionExample gen_niah(const TokenizerSpec& spec, const NiahSpec& niah);

/// Seeded word salad over the vocabulary minus `excluded` words.
std::vector<Passage> word_salad_pool(const TokenizerSpec& spec,
                                     const std::vector<std::string>& excluded,
                                     std::size_t n_passages, std::size_t min_words,
                                     std::size_t max_words, std::uint64_t seed);

/// Words of `texts` under the word tokenizer; for excluding needle and
/// question vocabulary from a distractor pool.
std::vector<std::string> words_of(const std::vector<std::string>& texts);

struct NiahTask {
  std::string needle;
  std::string question;
  std::vector<Passage> haystack;
  std::uint64_t seed = 0;
};

struct NiahGrid {
  std::vector<std::size_t> context_lengths;
  std::vector<double> depths;
  std::size_t trials = 1;

  void validate() const;
};

struct NiahGridResult {
  NiahGrid grid;
  std::vector<std::vector<double>> accuracy;  // [length][depth]

  double mean() const;
  /// Rows are context lengths, columns depths.
  std::string to_csv() const;
};

/// Fraction of trials per cell whose greedy decode reproduces the needle
/// tokens exactly. Each trial draws its own haystack from the task seed.
NiahGridResult run_niah_grid(const AttentionProvider& provider, const TokenizerSpec& spec,
                             const NiahTask& task, const NiahGrid& grid, const HeadMask& mask,
                             std::size_t jobs = 1,
                             std::string_view template_id = kDefaultTemplate);

/// Accuracy of guessing the first needle token uniformly over the vocabulary.
double niah_chance_level(const TokenizerSpec& spec);

/// The example a grid trial uses, exposed so callers can inspect it.
DetectionExample niah_trial_example(const TokenizerSpec& spec, const NiahTask& task,
                                    std::size_t context_length, double depth, std::size_t cell,
                                    std::size_t trial);

// ---------------------------------------------------------------------------
// Synthetic attention providers

enum class ResidualRule { other_docs, all_positions };

/// Planted heads send mass `mu` from every query row to the documents that
/// share a token with the query, and from every post-query row to the next
/// position of the copy source. Other heads emit seeded random causal rows.
struct SyntheticPlan {
  ModelConfig config;
  std::vector<HeadId> planted_heads;
  double mu = 0.9;
  ResidualRule residual = ResidualRule::other_docs;
  std::uint64_t noise_seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticPlan from_json(const nlohmann::json& j);
  static SyntheticPlan load(const std::filesystem::path& path);
};

class SyntheticProvider final : public AttentionProvider {
 public:
  SyntheticProvider(SyntheticPlan plan, TokenizerSpec spec);

  const ModelConfig& config() const override { return plan_.config; }
  const SyntheticPlan& plan() const noexcept { return plan_; }

  using AttentionProvider::forward;
  ForwardResult forward(std::span<const TokenId> tokens, const HeadMask& mask) const override;

 private:
  SyntheticPlan plan_;
  TokenizerSpec spec_;
};

std::unique_ptr<SyntheticProvider> make_synthetic_provider(const ModelConfig& config,
                                                           const SyntheticPlan& plan,
                                                           const TokenizerSpec& spec);

/// Mixes a query-independent distribution over document tokens into every
/// row of the wrapped provider: row' = (1 - strength) row + strength bias,
/// where document i receives weight doc_weights[i % size] spread over its
/// tokens.
class BiasInjectingProvider final : public AttentionProvider {
 public:
  BiasInjectingProvider(const AttentionProvider& base, TokenizerSpec spec,
                        std::vector<double> doc_weights, double strength);

  const ModelConfig& config() const override { return base_.config(); }

  using AttentionProvider::forward;
  ForwardResult forward(std::span<const TokenId> tokens, const HeadMask& mask) const override;

 private:
  const AttentionProvider& base_;
  TokenizerSpec spec_;
  std::vector<double> doc_weights_;
  double strength_;
};

/// Writes `mass` uniformly over `positions` of `row`, adjusting the last
/// entry so the double-precision sum in position order is exactly `mass`
/// whenever float precision allows it.
void spread_mass(std::span<float> row, std::span<const std::size_t> positions, double mass);

// ---------------------------------------------------------------------------
// Hand-built weights

/// One-layer, two-head model whose head 0 is a copy head for `needle`: from
/// the terminal separator and from each needle token it attends to the next
/// needle token in the context and writes it to the output. Head 1 has small
/// random weights. Needle tokens must be distinct.
ModelWeights craft_copy_weights(const TokenizerSpec& spec, std::string_view needle,
                                std::size_t max_seq_len = 1024, std::uint64_t seed = 0);

}  // namespace qrkit
