#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "qrkit/attention.hpp"

namespace qrkit {

/// Row-major float matrix. Weights are applied as `y = x W` with W shaped
/// [in x out].
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<float> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0f) {}

  float& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const float> row(std::size_t r) const { return {data.data() + r * cols, cols}; }
};

struct LayerWeights {
  std::vector<float> ln1_weight, ln1_bias;
  Matrix wq, wk, wv, wo;  // [d_model x d_model]; head h owns columns [h*d_head, (h+1)*d_head)
  std::vector<float> ln2_weight, ln2_bias;
  Matrix w1;  // [d_model x d_ff]
  std::vector<float> b1;
  Matrix w2;  // [d_ff x d_model]
  std::vector<float> b2;
};

/// Pre-norm decoder: x += Attn(LN1(x)); x += MLP(LN2(x)); logits = LN_f(x) U.
struct ModelWeights {
  ModelConfig config;
  Matrix tok_embed;                 // [vocab x d_model]
  std::optional<Matrix> pos_embed;  // [max_seq_len x d_model], only without rotary
  std::vector<LayerWeights> layers;
  std::vector<float> lnf_weight, lnf_bias;
  Matrix unembed;  // [d_model x vocab]

  /// Shapes consistent with config and every entry finite; throws otherwise.
  void validate() const;

  /// Layer norms set to identity, everything else zero.
  static ModelWeights zeros(const ModelConfig& config);
  /// Gaussian entries with standard deviation `scale`; layer norms identity.
  static ModelWeights random(const ModelConfig& config, std::uint64_t seed, float scale = 0.3f);
};

/// Full forward pass. Masked heads still have their attention recorded (and
/// flagged) but contribute zero to the output projection.
ForwardResult forward_with_attention(const ModelWeights& weights, std::span<const TokenId> tokens,
                                     const HeadMask& mask = {});

class RealTransformer final : public AttentionProvider {
 public:
  explicit RealTransformer(ModelWeights weights);

  const ModelConfig& config() const override { return weights_.config; }
  const ModelWeights& weights() const noexcept { return weights_; }

  using AttentionProvider::forward;
  ForwardResult forward(std::span<const TokenId> tokens, const HeadMask& mask) const override;

 private:
  ModelWeights weights_;
};

}  // namespace qrkit
