#pragma once

// Slow reference implementations written straight from the definitions,
// kept separate from the library code they check.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <numeric>
#include <string>
#include <vector>

#include "qrkit/model.hpp"
#include "qrkit/prompt.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const qrkit::Matrix& m) {
  Mat out(m.rows, std::vector<double>(m.cols));
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) out[r][c] = m(r, c);
  return out;
}

inline std::vector<double> vecmat(const std::vector<double>& x, const Mat& w) {
  std::vector<double> y(w[0].size(), 0.0);
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) y[j] += x[i] * w[i][j];
  return y;
}

inline std::vector<double> layer_norm(const std::vector<double>& x, const std::vector<float>& g,
                                      const std::vector<float>& b) {
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double var = 0.0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
  return y;
}

inline double gelu(double x) {
  const double pi = 3.14159265358979323846;
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / pi) * (x + 0.044715 * x * x * x)));
}

// Rotates adjacent pairs (2i, 2i+1) of each head by pos * base^(-2i/d_head).
inline void rope(std::vector<double>& v, std::size_t pos, const qrkit::ModelConfig& cfg) {
  for (std::size_t h = 0; h < cfg.n_heads; ++h) {
    for (std::size_t i = 0; i < cfg.d_head / 2; ++i) {
      const std::size_t a = h * cfg.d_head + 2 * i;
      const double theta = static_cast<double>(pos) /
                           std::pow(*cfg.rope_base, 2.0 * static_cast<double>(i) / static_cast<double>(cfg.d_head));
      const std::complex<double> z = std::complex<double>(v[a], v[a + 1]) * std::polar(1.0, theta);
      v[a] = z.real();
      v[a + 1] = z.imag();
    }
  }
}

struct Forward {
  std::vector<std::vector<double>> logits;                           // [pos][vocab]
  std::vector<std::vector<std::vector<std::vector<double>>>> attn;  // [l][h][q][k]
};

inline Forward forward(const qrkit::ModelWeights& w, const std::vector<qrkit::TokenId>& tokens,
                       const std::vector<qrkit::HeadId>& masked = {}) {
  const auto& cfg = w.config;
  const std::size_t n = tokens.size(), d = cfg.d_model, dh = cfg.d_head;
  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  for (std::size_t p = 0; p < n; ++p)
    for (std::size_t c = 0; c < d; ++c)
      x[p][c] = w.tok_embed(tokens[p], c) + (w.pos_embed ? (*w.pos_embed)(p, c) : 0.0);

  Forward out;
  out.attn.resize(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const auto& L = w.layers[l];
    const Mat wq = to_mat(L.wq), wk = to_mat(L.wk), wv = to_mat(L.wv), wo = to_mat(L.wo);
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto h = layer_norm(x[p], L.ln1_weight, L.ln1_bias);
      q[p] = vecmat(h, wq);
      k[p] = vecmat(h, wk);
      v[p] = vecmat(h, wv);
      if (cfg.rope_base) {
        rope(q[p], p, cfg);
        rope(k[p], p, cfg);
      }
    }
    out.attn[l].assign(cfg.n_heads, std::vector<std::vector<double>>(n));
    std::vector<std::vector<double>> concat(n, std::vector<double>(d, 0.0));
    for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
      const bool is_masked = std::find(masked.begin(), masked.end(), qrkit::HeadId{l, hd}) != masked.end();
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> s(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          double dot = 0.0;
          for (std::size_t c = 0; c < dh; ++c) dot += q[i][hd * dh + c] * k[j][hd * dh + c];
          s[j] = dot / std::sqrt(static_cast<double>(dh));
        }
        const double mx = *std::max_element(s.begin(), s.end());
        double z = 0.0;
        for (auto& e : s) z += (e = std::exp(e - mx));
        for (auto& e : s) e /= z;
        out.attn[l][hd][i] = s;
        if (is_masked) continue;
        for (std::size_t j = 0; j <= i; ++j)
          for (std::size_t c = 0; c < dh; ++c) concat[i][hd * dh + c] += s[j] * v[j][hd * dh + c];
      }
    }
    for (std::size_t p = 0; p < n; ++p) {
      const auto a = vecmat(concat[p], wo);
      for (std::size_t c = 0; c < d; ++c) x[p][c] += a[c];
      const auto h2 = layer_norm(x[p], L.ln2_weight, L.ln2_bias);
      auto m = vecmat(h2, to_mat(L.w1));
      for (std::size_t c = 0; c < m.size(); ++c) m[c] = gelu(m[c] + L.b1[c]);
      const auto mo = vecmat(m, to_mat(L.w2));
      for (std::size_t c = 0; c < d; ++c) x[p][c] += mo[c] + L.b2[c];
    }
  }
  const Mat u = to_mat(w.unembed);
  for (std::size_t p = 0; p < n; ++p) out.logits.push_back(vecmat(layer_norm(x[p], w.lnf_weight, w.lnf_bias), u));
  return out;
}

// Triple loop over (query token, doc token) pairs for one head.
template <typename Attn>
double qrscore_doc(const Attn& attn, std::size_t layer, std::size_t head, qrkit::Span query, qrkit::Span doc) {
  double total = 0.0;
  for (std::size_t i = query.begin; i < query.end; ++i)
    for (std::size_t j = doc.begin; j < doc.end; ++j) total += attn.at(layer, head, i, j);
  return total / static_cast<double>(query.size());
}

inline double dcg(const std::vector<int>& grades_in_rank_order, std::size_t k) {
  double s = 0.0;
  for (std::size_t i = 0; i < std::min(k, grades_in_rank_order.size()); ++i)
    s += (std::pow(2.0, grades_in_rank_order[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
  return s;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("qrkit-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
