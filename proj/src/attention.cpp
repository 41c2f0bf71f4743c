#include "qrkit/attention.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/core.h>

#include "qrkit/errors.hpp"

namespace qrkit {

void ModelConfig::validate() const {
  if (n_layers < 1) throw ArgumentError("model config: n_layers must be >= 1");
  if (n_heads < 1) throw ArgumentError("model config: n_heads must be >= 1");
  if (vocab_size < 2) throw ArgumentError("model config: vocab_size must be >= 2");
  if (d_head < 1 || n_heads * d_head != d_model) {
    throw ArgumentError(fmt::format("model config: n_heads * d_head ({} * {}) != d_model ({})",
                                    n_heads, d_head, d_model));
  }
  if (max_seq_len < 1) throw ArgumentError("model config: max_seq_len must be >= 1");
  if (rope_base) {
    if (!(*rope_base > 0.0) || !std::isfinite(*rope_base)) {
      throw ArgumentError("model config: rope_base must be a positive real or \"none\"");
    }
    if (d_head % 2 != 0) throw ArgumentError("model config: rotary encoding needs an even d_head");
  }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"n_layers", c.n_layers},     {"n_heads", c.n_heads},
                     {"d_model", c.d_model},       {"d_head", c.d_head},
                     {"d_ff", c.d_ff},             {"vocab_size", c.vocab_size},
                     {"max_seq_len", c.max_seq_len}};
  if (c.rope_base) {
    j["rope_base"] = *c.rope_base;
  } else {
    j["rope_base"] = "none";
  }
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_head = j.value("d_head", c.n_heads ? c.d_model / c.n_heads : 0);
  c.d_ff = j.value("d_ff", 4 * c.d_model);
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.rope_base = 10000.0;
  if (auto it = j.find("rope_base"); it != j.end()) {
    if (it->is_string()) {
      if (it->get<std::string>() != "none") {
        throw ParseError("model config: rope_base must be a number or \"none\"");
      }
      c.rope_base.reset();
    } else if (it->is_null()) {
      c.rope_base.reset();
    } else {
      c.rope_base = it->get<double>();
    }
  }
}

std::string to_string(HeadId id) { return fmt::format("({},{})", id.layer, id.head); }

void check_head(HeadId id, const ModelConfig& config) {
  if (id.layer >= config.n_layers || id.head >= config.n_heads) {
    throw IndexError(fmt::format("head {} out of range for {} layers x {} heads", to_string(id),
                                 config.n_layers, config.n_heads));
  }
}

HeadMask::HeadMask(std::vector<HeadId> heads) : heads_(std::move(heads)) {
  std::sort(heads_.begin(), heads_.end());
  if (std::adjacent_find(heads_.begin(), heads_.end()) != heads_.end()) {
    throw ArgumentError("head mask contains duplicate heads");
  }
}

HeadMask HeadMask::all(const ModelConfig& config) {
  std::vector<HeadId> heads;
  heads.reserve(config.total_heads());
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (std::size_t h = 0; h < config.n_heads; ++h) heads.push_back({l, h});
  }
  return HeadMask(std::move(heads));
}

bool HeadMask::contains(HeadId id) const {
  return std::binary_search(heads_.begin(), heads_.end(), id);
}

void HeadMask::validate(const ModelConfig& config) const {
  for (const auto& id : heads_) check_head(id, config);
}

AttentionTensor::AttentionTensor(std::size_t n_layers, std::size_t n_heads, std::size_t seq_len)
    : n_layers_(n_layers),
      n_heads_(n_heads),
      seq_len_(seq_len),
      per_head_(seq_len * (seq_len + 1) / 2),
      weights_(n_layers * n_heads * per_head_, 0.0f),
      masked_(n_layers * n_heads, 0) {}

std::size_t AttentionTensor::offset(std::size_t layer, std::size_t head, std::size_t q) const {
  if (layer >= n_layers_ || head >= n_heads_ || q >= seq_len_) {
    throw IndexError(fmt::format("attention index (layer {}, head {}, q {}) out of range", layer,
                                 head, q));
  }
  return (layer * n_heads_ + head) * per_head_ + q * (q + 1) / 2;
}

std::span<const float> AttentionTensor::row(std::size_t layer, std::size_t head,
                                            std::size_t q) const {
  return {weights_.data() + offset(layer, head, q), q + 1};
}

std::span<float> AttentionTensor::row(std::size_t layer, std::size_t head, std::size_t q) {
  return {weights_.data() + offset(layer, head, q), q + 1};
}

float AttentionTensor::at(std::size_t layer, std::size_t head, std::size_t q,
                          std::size_t k) const {
  const std::size_t base = offset(layer, head, q);
  return k > q ? 0.0f : weights_[base + k];
}

bool AttentionTensor::is_masked(HeadId id) const {
  return masked_.at(flat_index(id, n_heads_)) != 0;
}

void AttentionTensor::set_masked(HeadId id, bool masked) {
  masked_.at(flat_index(id, n_heads_)) = masked ? 1 : 0;
}

void AttentionTensor::check_invariants(double tol) const {
  for (std::size_t l = 0; l < n_layers_; ++l) {
    for (std::size_t h = 0; h < n_heads_; ++h) {
      for (std::size_t q = 0; q < seq_len_; ++q) {
        double sum = 0.0;
        for (float w : row(l, h, q)) {
          if (!(w >= 0.0f && w <= 1.0f)) {
            throw NumericError(
                fmt::format("attention weight {} outside [0,1] at layer {} head {} row {}", w, l,
                            h, q));
          }
          sum += w;
        }
        if (std::abs(sum - 1.0) > tol) {
          throw NumericError(fmt::format(
              "attention row sums to {} at layer {} head {} row {}", sum, l, h, q));
        }
      }
    }
  }
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) throw ArgumentError("argmax of empty range");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

DecodeTrace greedy_decode_with_trace(const AttentionProvider& provider,
                                     std::span<const TokenId> prompt, std::size_t max_new,
                                     const HeadMask& mask, std::optional<TokenId> eos) {
  if (prompt.empty()) throw ArgumentError("decode: prompt is empty");
  if (max_new < 1) throw ArgumentError("decode: max_new must be >= 1");
  const ModelConfig& config = provider.config();

  DecodeTrace trace;
  trace.n_layers = config.n_layers;
  trace.n_heads = config.n_heads;
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());

  for (std::size_t step = 0; step < max_new; ++step) {
    ForwardResult fwd = provider.forward(prefix, mask);
    const std::size_t last = prefix.size() - 1;
    const auto next = static_cast<TokenId>(argmax(fwd.logits.row(last)));

    DecodeStep record;
    record.token = next;
    record.prefix_len = prefix.size();
    record.attention.reserve(config.total_heads() * prefix.size());
    for (std::size_t l = 0; l < config.n_layers; ++l) {
      for (std::size_t h = 0; h < config.n_heads; ++h) {
        auto r = fwd.attention.row(l, h, last);
        record.attention.insert(record.attention.end(), r.begin(), r.end());
      }
    }
    trace.steps.push_back(std::move(record));
    trace.generated.push_back(next);
    if (eos && next == *eos) break;
    prefix.push_back(next);
  }
  return trace;
}

}  // namespace qrkit
