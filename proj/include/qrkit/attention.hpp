#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace qrkit {

using TokenId = std::uint32_t;

/// Shape of a decoder-only transformer. `rope_base == nullopt` means no
/// rotary encoding (learned absolute positions, or none at all).
struct ModelConfig {
  std::size_t n_layers = 1;
  std::size_t n_heads = 1;
  std::size_t d_model = 8;
  std::size_t d_head = 8;
  std::size_t d_ff = 32;
  std::size_t vocab_size = 2;
  std::size_t max_seq_len = 512;
  std::optional<double> rope_base = 10000.0;

  void validate() const;
  std::size_t total_heads() const noexcept { return n_layers * n_heads; }

  bool same_shape(const ModelConfig& other) const noexcept {
    return n_layers == other.n_layers && n_heads == other.n_heads;
  }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

struct HeadId {
  std::size_t layer = 0;
  std::size_t head = 0;

  auto operator<=>(const HeadId&) const = default;
};

std::string to_string(HeadId id);

/// Flat index layer * n_heads + head.
inline std::size_t flat_index(HeadId id, std::size_t n_heads) noexcept {
  return id.layer * n_heads + id.head;
}

void check_head(HeadId id, const ModelConfig& config);

/// Heads whose attention output is zeroed before the output projection.
class HeadMask {
 public:
  HeadMask() = default;
  explicit HeadMask(std::vector<HeadId> heads);

  static HeadMask all(const ModelConfig& config);

  bool contains(HeadId id) const;
  const std::vector<HeadId>& heads() const noexcept { return heads_; }
  std::size_t size() const noexcept { return heads_.size(); }
  bool empty() const noexcept { return heads_.empty(); }
  void validate(const ModelConfig& config) const;

 private:
  std::vector<HeadId> heads_;  // sorted, unique
};

/// Post-softmax causal attention weights for one prompt, `[layer][head][q][k]`
/// with k <= q. Rows are stored packed lower-triangular.
class AttentionTensor {
 public:
  AttentionTensor() = default;
  AttentionTensor(std::size_t n_layers, std::size_t n_heads, std::size_t seq_len);

  std::size_t n_layers() const noexcept { return n_layers_; }
  std::size_t n_heads() const noexcept { return n_heads_; }
  std::size_t seq_len() const noexcept { return seq_len_; }

  // Row q has q + 1 entries (keys 0..q).
  std::span<const float> row(std::size_t layer, std::size_t head, std::size_t q) const;
  std::span<float> row(std::size_t layer, std::size_t head, std::size_t q);

  // Zero for k > q.
  float at(std::size_t layer, std::size_t head, std::size_t q, std::size_t k) const;

  bool is_masked(HeadId id) const;
  void set_masked(HeadId id, bool masked);

  /// Throws NumericError unless every row sums to 1 within `tol` and all
  /// entries lie in [0, 1].
  void check_invariants(double tol = 1e-5) const;

 private:
  std::size_t offset(std::size_t layer, std::size_t head, std::size_t q) const;

  std::size_t n_layers_ = 0;
  std::size_t n_heads_ = 0;
  std::size_t seq_len_ = 0;
  std::size_t per_head_ = 0;
  std::vector<float> weights_;
  std::vector<std::uint8_t> masked_;
};

struct Logits {
  std::size_t seq_len = 0;
  std::size_t vocab_size = 0;
  std::vector<float> values;  // row-major [seq_len x vocab_size]

  std::span<const float> row(std::size_t pos) const {
    return {values.data() + pos * vocab_size, vocab_size};
  }
  std::span<float> row(std::size_t pos) { return {values.data() + pos * vocab_size, vocab_size}; }
};

struct ForwardResult {
  Logits logits;
  AttentionTensor attention;
};

/// Anything that can run a forward pass and report its attention weights:
/// the real transformer and the synthetic oracle providers.
class AttentionProvider {
 public:
  virtual ~AttentionProvider() = default;
  virtual const ModelConfig& config() const = 0;
  virtual ForwardResult forward(std::span<const TokenId> tokens, const HeadMask& mask) const = 0;

  ForwardResult forward(std::span<const TokenId> tokens) const { return forward(tokens, HeadMask{}); }
};

/// Attention of the newest position over the full prefix at one decode step.
struct DecodeStep {
  TokenId token = 0;
  std::size_t prefix_len = 0;
  std::vector<float> attention;  // [layer][head][prefix_len]

  std::span<const float> row(HeadId id, std::size_t n_heads) const {
    return {attention.data() + flat_index(id, n_heads) * prefix_len, prefix_len};
  }
};

struct DecodeTrace {
  std::size_t n_layers = 0;
  std::size_t n_heads = 0;
  std::vector<TokenId> generated;
  std::vector<DecodeStep> steps;
};

/// Lowest index wins ties.
std::size_t argmax(std::span<const float> values);

/// Greedy argmax decoding, recording attention of the newest position at
/// every step. Stops after `max_new` tokens or after emitting `eos`.
DecodeTrace greedy_decode_with_trace(const AttentionProvider& provider,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     const HeadMask& mask = {},
                                     std::optional<TokenId> eos = std::nullopt);

}  // namespace qrkit
