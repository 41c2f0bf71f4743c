#include "qrkit/model.hpp"

#include <cmath>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/rng.hpp"

namespace qrkit {

namespace {

constexpr double kLayerNormEps = 1e-5;

void expect_shape(const Matrix& m, std::size_t rows, std::size_t cols, const char* name) {
  if (m.rows != rows || m.cols != cols || m.data.size() != rows * cols) {
    throw ArgumentError(fmt::format("weights: {} has shape [{} x {}], expected [{} x {}]", name,
                                    m.rows, m.cols, rows, cols));
  }
}

void expect_len(const std::vector<float>& v, std::size_t n, const char* name) {
  if (v.size() != n) {
    throw ArgumentError(fmt::format("weights: {} has length {}, expected {}", name, v.size(), n));
  }
}

void expect_finite(std::span<const float> v, const std::string& name) {
  for (float x : v) {
    if (!std::isfinite(x)) throw NumericError(fmt::format("weights: {} has non-finite entries", name));
  }
}

void fill_normal(std::span<float> v, Rng& rng, float scale) {
  for (auto& x : v) x = static_cast<float>(rng.normal() * scale);
}

// y[n x out] = x[n x in] W[in x out] (+ bias)
std::vector<float> matmul(const std::vector<float>& x, std::size_t n, const Matrix& w,
                          const std::vector<float>* bias = nullptr) {
  std::vector<float> y(n * w.cols);
  std::vector<double> acc(w.cols);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    if (bias) {
      for (std::size_t c = 0; c < w.cols; ++c) acc[c] = (*bias)[c];
    }
    const float* xi = x.data() + i * w.rows;
    for (std::size_t r = 0; r < w.rows; ++r) {
      const double xv = xi[r];
      if (xv == 0.0) continue;
      const float* wr = w.data.data() + r * w.cols;
      for (std::size_t c = 0; c < w.cols; ++c) acc[c] += xv * wr[c];
    }
    for (std::size_t c = 0; c < w.cols; ++c) y[i * w.cols + c] = static_cast<float>(acc[c]);
  }
  return y;
}

std::vector<float> layer_norm(const std::vector<float>& x, std::size_t n, std::size_t d,
                              const std::vector<float>& gamma, const std::vector<float>& beta) {
  std::vector<float> y(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    const float* xi = x.data() + i * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += xi[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) var += (xi[c] - mean) * (xi[c] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t c = 0; c < d; ++c) {
      y[i * d + c] = static_cast<float>((xi[c] - mean) * inv * gamma[c] + beta[c]);
    }
  }
  return y;
}

void apply_rope(std::vector<float>& x, std::size_t n, const ModelConfig& config) {
  const double base = *config.rope_base;
  const std::size_t dh = config.d_head;
  for (std::size_t pos = 0; pos < n; ++pos) {
    for (std::size_t h = 0; h < config.n_heads; ++h) {
      float* v = x.data() + pos * config.d_model + h * dh;
      for (std::size_t i = 0; i < dh / 2; ++i) {
        const double theta =
            static_cast<double>(pos) * std::pow(base, -2.0 * static_cast<double>(i) / dh);
        const double c = std::cos(theta), s = std::sin(theta);
        const double a = v[2 * i], b = v[2 * i + 1];
        v[2 * i] = static_cast<float>(a * c - b * s);
        v[2 * i + 1] = static_cast<float>(a * s + b * c);
      }
    }
  }
}

float gelu(float x) {
  const double v = x;
  return static_cast<float>(0.5 * v *
                            (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v))));
}

void check_finite(const std::vector<float>& x, std::size_t layer, const char* stage) {
  for (float v : x) {
    if (!std::isfinite(v)) {
      throw NumericError(fmt::format("non-finite activation in layer {} ({})", layer, stage));
    }
  }
}

}  // namespace

void ModelWeights::validate() const {
  config.validate();
  const std::size_t d = config.d_model, v = config.vocab_size, f = config.d_ff;
  expect_shape(tok_embed, v, d, "tok_embed");
  expect_finite(tok_embed.data, "tok_embed");
  if (pos_embed) {
    if (config.rope_base) throw ArgumentError("weights: pos_embed given together with rotary encoding");
    expect_shape(*pos_embed, config.max_seq_len, d, "pos_embed");
    expect_finite(pos_embed->data, "pos_embed");
  }
  if (layers.size() != config.n_layers) {
    throw ArgumentError(
        fmt::format("weights: {} layers present, config says {}", layers.size(), config.n_layers));
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& L = layers[i];
    const std::string p = fmt::format("layers.{}.", i);
    expect_len(L.ln1_weight, d, "ln1.weight");
    expect_len(L.ln1_bias, d, "ln1.bias");
    expect_shape(L.wq, d, d, "attn.wq");
    expect_shape(L.wk, d, d, "attn.wk");
    expect_shape(L.wv, d, d, "attn.wv");
    expect_shape(L.wo, d, d, "attn.wo");
    expect_len(L.ln2_weight, d, "ln2.weight");
    expect_len(L.ln2_bias, d, "ln2.bias");
    expect_shape(L.w1, d, f, "mlp.w1");
    expect_len(L.b1, f, "mlp.b1");
    expect_shape(L.w2, f, d, "mlp.w2");
    expect_len(L.b2, d, "mlp.b2");
    for (const auto* m : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2}) expect_finite(m->data, p + "matrix");
    for (const auto* b : {&L.ln1_weight, &L.ln1_bias, &L.ln2_weight, &L.ln2_bias, &L.b1, &L.b2}) {
      expect_finite(*b, p + "vector");
    }
  }
  expect_len(lnf_weight, d, "ln_f.weight");
  expect_len(lnf_bias, d, "ln_f.bias");
  expect_finite(lnf_weight, "ln_f.weight");
  expect_finite(lnf_bias, "ln_f.bias");
  expect_shape(unembed, d, v, "unembed");
  expect_finite(unembed.data, "unembed");
}

ModelWeights ModelWeights::zeros(const ModelConfig& config) {
  config.validate();
  const std::size_t d = config.d_model, v = config.vocab_size, f = config.d_ff;
  ModelWeights w;
  w.config = config;
  w.tok_embed = Matrix(v, d);
  w.layers.resize(config.n_layers);
  for (auto& L : w.layers) {
    L.ln1_weight.assign(d, 1.0f);
    L.ln1_bias.assign(d, 0.0f);
    L.wq = L.wk = L.wv = L.wo = Matrix(d, d);
    L.ln2_weight.assign(d, 1.0f);
    L.ln2_bias.assign(d, 0.0f);
    L.w1 = Matrix(d, f);
    L.b1.assign(f, 0.0f);
    L.w2 = Matrix(f, d);
    L.b2.assign(d, 0.0f);
  }
  w.lnf_weight.assign(d, 1.0f);
  w.lnf_bias.assign(d, 0.0f);
  w.unembed = Matrix(d, v);
  return w;
}

ModelWeights ModelWeights::random(const ModelConfig& config, std::uint64_t seed, float scale) {
  ModelWeights w = zeros(config);
  Rng rng(seed);
  fill_normal(w.tok_embed.data, rng, 1.0f);
  if (!config.rope_base) {
    w.pos_embed = Matrix(config.max_seq_len, config.d_model);
    fill_normal(w.pos_embed->data, rng, 0.5f);
  }
  for (auto& L : w.layers) {
    for (auto* m : {&L.wq, &L.wk, &L.wv, &L.wo, &L.w1, &L.w2}) fill_normal(m->data, rng, scale);
    fill_normal(L.b1, rng, 0.1f);
    fill_normal(L.b2, rng, 0.1f);
    for (auto& g : L.ln1_weight) g = static_cast<float>(1.0 + 0.1 * rng.normal());
    for (auto& g : L.ln2_weight) g = static_cast<float>(1.0 + 0.1 * rng.normal());
    fill_normal(L.ln1_bias, rng, 0.1f);
    fill_normal(L.ln2_bias, rng, 0.1f);
  }
  fill_normal(w.unembed.data, rng, scale);
  return w;
}

ForwardResult forward_with_attention(const ModelWeights& weights, std::span<const TokenId> tokens,
                                     const HeadMask& mask) {
  const ModelConfig& cfg = weights.config;
  const std::size_t n = tokens.size();
  const std::size_t d = cfg.d_model, dh = cfg.d_head;
  if (n == 0) throw LengthError("forward: token sequence is empty");
  if (n > cfg.max_seq_len) {
    throw LengthError(fmt::format("forward: sequence length {} exceeds max_seq_len {}", n,
                                  cfg.max_seq_len));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] >= cfg.vocab_size) {
      throw VocabError(fmt::format("forward: token id {} at position {} >= vocab_size {}",
                                   tokens[i], i, cfg.vocab_size));
    }
  }
  mask.validate(cfg);

  std::vector<float> x(n * d);
  for (std::size_t p = 0; p < n; ++p) {
    auto e = weights.tok_embed.row(tokens[p]);
    std::copy(e.begin(), e.end(), x.begin() + p * d);
    if (weights.pos_embed) {
      auto pe = weights.pos_embed->row(p);
      for (std::size_t c = 0; c < d; ++c) x[p * d + c] += pe[c];
    }
  }

  ForwardResult out;
  out.attention = AttentionTensor(cfg.n_layers, cfg.n_heads, n);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<double> probs(n);
  std::vector<double> acc(dh);

  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& L = weights.layers[l];
    const auto h = layer_norm(x, n, d, L.ln1_weight, L.ln1_bias);
    auto q = matmul(h, n, L.wq);
    auto k = matmul(h, n, L.wk);
    const auto v = matmul(h, n, L.wv);
    if (cfg.rope_base) {
      apply_rope(q, n, cfg);
      apply_rope(k, n, cfg);
    }

    std::vector<float> heads_out(n * d, 0.0f);
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const HeadId id{l, hd};
      const bool masked = mask.contains(id);
      out.attention.set_masked(id, masked);
      const std::size_t off = hd * dh;
      for (std::size_t qi = 0; qi < n; ++qi) {
        const float* qv = q.data() + qi * d + off;
        double mx = -INFINITY;
        for (std::size_t ki = 0; ki <= qi; ++ki) {
          const float* kv = k.data() + ki * d + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += static_cast<double>(qv[c]) * kv[c];
          probs[ki] = s * scale;
          mx = std::max(mx, probs[ki]);
        }
        double z = 0.0;
        for (std::size_t ki = 0; ki <= qi; ++ki) {
          probs[ki] = std::exp(probs[ki] - mx);
          z += probs[ki];
        }
        auto row = out.attention.row(l, hd, qi);
        for (std::size_t ki = 0; ki <= qi; ++ki) {
          probs[ki] /= z;
          row[ki] = static_cast<float>(probs[ki]);
        }
        if (masked) continue;
        std::fill(acc.begin(), acc.end(), 0.0);
        for (std::size_t ki = 0; ki <= qi; ++ki) {
          const float* vv = v.data() + ki * d + off;
          for (std::size_t c = 0; c < dh; ++c) acc[c] += probs[ki] * vv[c];
        }
        for (std::size_t c = 0; c < dh; ++c) heads_out[qi * d + off + c] = static_cast<float>(acc[c]);
      }
    }
    const auto attn = matmul(heads_out, n, L.wo);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn[i];
    check_finite(x, l, "attention");

    const auto h2 = layer_norm(x, n, d, L.ln2_weight, L.ln2_bias);
    auto m = matmul(h2, n, L.w1, &L.b1);
    for (auto& val : m) val = gelu(val);
    const auto mo = matmul(m, n, L.w2, &L.b2);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mo[i];
    check_finite(x, l, "mlp");
  }

  const auto xf = layer_norm(x, n, d, weights.lnf_weight, weights.lnf_bias);
  out.logits.seq_len = n;
  out.logits.vocab_size = cfg.vocab_size;
  out.logits.values = matmul(xf, n, weights.unembed);
  for (float val : out.logits.values) {
    if (!std::isfinite(val)) throw NumericError("non-finite logits after final layer norm");
  }
  return out;
}

RealTransformer::RealTransformer(ModelWeights weights) : weights_(std::move(weights)) {
  weights_.validate();
}

ForwardResult RealTransformer::forward(std::span<const TokenId> tokens, const HeadMask& mask) const {
  return forward_with_attention(weights_, tokens, mask);
}

}  // namespace qrkit
