#include <doctest.h>

#include "oracles.hpp"
#include "qrkit/errors.hpp"
#include "qrkit/model.hpp"
#include "qrkit/rng.hpp"
#include "qrkit/weights_io.hpp"

using namespace qrkit;

namespace {

ModelConfig small_config(bool rope) {
  ModelConfig c;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_model = 8;
  c.d_head = 4;
  c.d_ff = 12;
  c.vocab_size = 11;
  c.max_seq_len = 16;
  if (!rope) c.rope_base.reset();
  return c;
}

std::vector<TokenId> random_tokens(std::size_t n, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenId> t(n);
  for (auto& x : t) x = static_cast<TokenId>(rng.below(vocab));
  return t;
}

void compare_with_oracle(const ModelWeights& w, const std::vector<TokenId>& tokens,
                         const std::vector<HeadId>& masked) {
  const auto got = forward_with_attention(w, tokens, HeadMask(masked));
  const auto want = oracle::forward(w, tokens, masked);
  const auto& cfg = w.config;
  for (std::size_t l = 0; l < cfg.n_layers; ++l)
    for (std::size_t h = 0; h < cfg.n_heads; ++h)
      for (std::size_t q = 0; q < tokens.size(); ++q)
        for (std::size_t k = 0; k <= q; ++k)
          REQUIRE(got.attention.at(l, h, q, k) == doctest::Approx(want.attn[l][h][q][k]).epsilon(1e-4));
  for (std::size_t p = 0; p < tokens.size(); ++p)
    for (std::size_t v = 0; v < cfg.vocab_size; ++v)
      REQUIRE(got.logits.row(p)[v] == doctest::Approx(want.logits[p][v]).epsilon(1e-4).scale(1.0));
}

}  // namespace

TEST_CASE("config validation and json round trip") {
  auto c = small_config(true);
  CHECK_NOTHROW(c.validate());
  auto bad = c;
  bad.d_head = 3;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);
  bad = c;
  bad.n_layers = 0;
  CHECK_THROWS_AS(bad.validate(), ArgumentError);

  nlohmann::json j = c;
  CHECK(j.get<ModelConfig>().rope_base == c.rope_base);
  auto none = small_config(false);
  j = none;
  CHECK(j["rope_base"] == "none");
  CHECK_FALSE(j.get<ModelConfig>().rope_base.has_value());
}

TEST_CASE("forward matches the naive oracle") {
  for (bool rope : {true, false}) {
    const auto w = ModelWeights::random(small_config(rope), rope ? 5 : 6, 0.5f);
    CAPTURE(rope);
    compare_with_oracle(w, random_tokens(9, 11, 1), {});
    compare_with_oracle(w, random_tokens(16, 11, 2), {{0, 1}});
    compare_with_oracle(w, random_tokens(5, 11, 3), {{0, 0}, {1, 1}});
  }
}

TEST_CASE("attention rows are causal distributions") {
  const auto w = ModelWeights::random(small_config(true), 9);
  const auto r = forward_with_attention(w, random_tokens(12, 11, 4));
  CHECK_NOTHROW(r.attention.check_invariants(1e-5));
  CHECK(r.attention.at(0, 0, 3, 7) == 0.0f);
}

TEST_CASE("masked heads keep their attention but lose their output") {
  const auto w = ModelWeights::random(small_config(true), 10, 0.5f);
  const auto tokens = random_tokens(8, 11, 5);
  const auto plain = forward_with_attention(w, tokens);
  const auto masked = forward_with_attention(w, tokens, HeadMask({{0, 1}}));
  CHECK(masked.attention.is_masked({0, 1}));
  CHECK_FALSE(masked.attention.is_masked({0, 0}));
  // layer 0 attention is computed before any masking takes effect
  for (std::size_t q = 0; q < tokens.size(); ++q)
    for (std::size_t k = 0; k <= q; ++k) CHECK(masked.attention.at(0, 1, q, k) == plain.attention.at(0, 1, q, k));
  CHECK(masked.logits.values != plain.logits.values);
}

TEST_CASE("forward input errors") {
  const auto w = ModelWeights::random(small_config(true), 1);
  RealTransformer m(w);
  CHECK_THROWS_AS(m.forward(std::vector<TokenId>{}), LengthError);
  CHECK_THROWS_AS(m.forward(std::vector<TokenId>(17, 1)), LengthError);
  CHECK_THROWS_AS(m.forward(std::vector<TokenId>{1, 11}), VocabError);
  CHECK_THROWS_AS(m.forward(std::vector<TokenId>{1, 2}, HeadMask({{2, 0}})), IndexError);
  CHECK_THROWS_AS(HeadMask({{0, 0}, {0, 0}}), ArgumentError);
}

TEST_CASE("non-finite weights are reported") {
  auto w = ModelWeights::random(small_config(true), 1);
  w.layers[1].w1(0, 0) = std::numeric_limits<float>::infinity();
  CHECK_THROWS(w.validate());
}

TEST_CASE("weight files round trip") {
  for (bool rope : {true, false}) {
    const auto w = ModelWeights::random(small_config(rope), 21);
    const auto bin = serialize_weights_binary(w);
    const auto back = parse_weights(bin);
    CHECK(serialize_weights_binary(back) == bin);
    const auto js = serialize_weights_json(w);
    CHECK(serialize_weights_binary(parse_weights(js)) == bin);
    const auto tokens = random_tokens(6, 11, 7);
    CHECK(forward_with_attention(back, tokens).logits.values == forward_with_attention(w, tokens).logits.values);
  }
}

TEST_CASE("corrupt weight files are rejected") {
  const auto bin = serialize_weights_binary(ModelWeights::random(small_config(true), 2));
  CHECK_THROWS_AS(parse_weights("XXXX" + bin.substr(4)), ParseError);
  CHECK_THROWS_AS(parse_weights(bin.substr(0, bin.size() - 4)), ParseError);
  CHECK_THROWS_AS(parse_weights(bin + "junk"), ParseError);
  CHECK_THROWS_AS(parse_weights("{\"config\": 3}"), ParseError);
}

TEST_CASE("greedy decode is deterministic and stops at eos") {
  const auto w = ModelWeights::random(small_config(true), 3, 0.8f);
  RealTransformer m(w);
  const std::vector<TokenId> prompt{4, 5, 6};
  const auto a = greedy_decode_with_trace(m, prompt, 5);
  const auto b = greedy_decode_with_trace(m, prompt, 5);
  CHECK(a.generated == b.generated);
  CHECK(a.steps.size() == 5);
  CHECK(a.steps[2].prefix_len == 5);
  const auto stop = greedy_decode_with_trace(m, prompt, 5, {}, a.generated[1]);
  CHECK(stop.generated.size() <= 2);
  CHECK(stop.generated.back() == a.generated[1]);
  CHECK(argmax(std::vector<float>{1.0f, 3.0f, 3.0f}) == 1);
}
