#include "qrkit/tokenizer.hpp"

#include <algorithm>
#include <set>

#include <fmt/core.h>

#include "qrkit/errors.hpp"
#include "qrkit/io_util.hpp"

namespace qrkit {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

constexpr const char* kReservedNames[] = {"<bos>", "<eos>", "<sep>"};

}  // namespace

TokenizerSpec TokenizerSpec::byte_level() {
  TokenizerSpec spec;
  spec.mode_ = TokenizerMode::byte;
  for (int b = 0; b < 256; ++b) {
    spec.vocab_.emplace(std::string(1, static_cast<char>(b)), static_cast<TokenId>(3 + b));
  }
  spec.finalize();
  return spec;
}

TokenizerSpec TokenizerSpec::word_level(const std::vector<std::string>& words) {
  std::unordered_map<std::string, TokenId> vocab;
  TokenId next = 3;
  for (const auto& w : words) {
    if (!vocab.emplace(w, next).second) throw VocabError("duplicate vocabulary word: " + w);
    ++next;
  }
  return word_level(std::move(vocab), 0, 1, 2);
}

TokenizerSpec TokenizerSpec::word_level(std::unordered_map<std::string, TokenId> vocab,
                                        TokenId bos, TokenId eos, TokenId sep) {
  TokenizerSpec spec;
  spec.mode_ = TokenizerMode::word;
  spec.vocab_ = std::move(vocab);
  spec.bos_ = bos;
  spec.eos_ = eos;
  spec.sep_ = sep;
  spec.finalize();
  return spec;
}

void TokenizerSpec::finalize() {
  if (bos_ == eos_ || bos_ == sep_ || eos_ == sep_) {
    throw VocabError("tokenizer: reserved ids must be distinct");
  }
  TokenId max_id = std::max({bos_, eos_, sep_});
  std::set<TokenId> seen;
  for (const auto& [unit, id] : vocab_) {
    if (mode_ == TokenizerMode::word) {
      if (unit.empty() || std::any_of(unit.begin(), unit.end(), is_space)) {
        throw VocabError(fmt::format("tokenizer: word \"{}\" is empty or contains whitespace", unit));
      }
    } else if (unit.size() != 1) {
      throw VocabError("tokenizer: byte-mode units must be single bytes");
    }
    if (is_reserved(id)) {
      throw VocabError(fmt::format("tokenizer: unit \"{}\" reuses reserved id {}", unit, id));
    }
    if (!seen.insert(id).second) throw VocabError(fmt::format("tokenizer: id {} assigned twice", id));
    max_id = std::max(max_id, id);
  }
  if (mode_ == TokenizerMode::byte && vocab_.size() != 256) {
    throw VocabError("tokenizer: byte mode needs all 256 bytes in the vocabulary");
  }
  vocab_size_ = static_cast<std::size_t>(max_id) + 1;
  id_to_unit_.assign(vocab_size_, {});
  for (const auto& [unit, id] : vocab_) id_to_unit_[id] = unit;
  id_to_unit_[bos_] = kReservedNames[0];
  id_to_unit_[eos_] = kReservedNames[1];
  id_to_unit_[sep_] = kReservedNames[2];
}

TokenizerSpec TokenizerSpec::from_json(const nlohmann::json& j) {
  const auto mode = j.value("mode", std::string("byte"));
  if (mode == "byte") return byte_level();
  if (mode != "word") throw ParseError("tokenizer: unknown mode " + mode);
  TokenId bos = 0, eos = 1, sep = 2;
  if (auto r = j.find("reserved"); r != j.end()) {
    bos = r->value("bos", bos);
    eos = r->value("eos", eos);
    sep = r->value("sep", sep);
  }
  const auto& v = j.at("vocab");
  if (v.is_array()) {
    auto words = v.get<std::vector<std::string>>();
    if (bos != 0 || eos != 1 || sep != 2) {
      throw ParseError("tokenizer: list vocabularies require reserved ids 0/1/2");
    }
    return word_level(words);
  }
  return word_level(v.get<std::unordered_map<std::string, TokenId>>(), bos, eos, sep);
}

TokenizerSpec TokenizerSpec::load(const std::filesystem::path& path) {
  try {
    return from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

nlohmann::json TokenizerSpec::to_json() const {
  if (mode_ == TokenizerMode::byte) return {{"mode", "byte"}};
  nlohmann::json vocab = nlohmann::json::object();
  for (const auto& [unit, id] : vocab_) vocab[unit] = id;
  return {{"mode", "word"},
          {"reserved", {{"bos", bos_}, {"eos", eos_}, {"sep", sep_}}},
          {"vocab", vocab}};
}

std::optional<TokenId> TokenizerSpec::lookup(std::string_view unit) const {
  auto it = vocab_.find(std::string(unit));
  if (it == vocab_.end()) return std::nullopt;
  return it->second;
}

std::vector<TokenPiece> TokenizerSpec::tokenize_with_offsets(std::string_view text) const {
  std::vector<TokenPiece> out;
  if (mode_ == TokenizerMode::byte) {
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      out.push_back({static_cast<TokenId>(3 + static_cast<unsigned char>(text[i])), i, i + 1});
    }
    return out;
  }
  std::vector<std::string> unknown;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    std::size_t j = i;
    while (j < text.size() && !is_space(text[j])) ++j;
    const auto unit = text.substr(i, j - i);
    if (auto id = lookup(unit)) {
      out.push_back({*id, i, j});
    } else if (std::find(unknown.begin(), unknown.end(), unit) == unknown.end()) {
      unknown.emplace_back(unit);
    }
    i = j;
  }
  if (!unknown.empty()) {
    std::string list;
    for (std::size_t k = 0; k < unknown.size() && k < 20; ++k) {
      list += (k ? ", \"" : "\"") + unknown[k] + "\"";
    }
    if (unknown.size() > 20) list += fmt::format(" (+{} more)", unknown.size() - 20);
    throw VocabError("unknown word(s) not in vocabulary: " + list);
  }
  return out;
}

std::vector<TokenId> TokenizerSpec::tokenize(std::string_view text) const {
  const auto pieces = tokenize_with_offsets(text);
  std::vector<TokenId> ids;
  ids.reserve(pieces.size());
  for (const auto& p : pieces) ids.push_back(p.id);
  return ids;
}

std::string TokenizerSpec::detokenize(std::span<const TokenId> ids) const {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const TokenId id = ids[i];
    if (id >= vocab_size_ || id_to_unit_[id].empty()) {
      throw VocabError(fmt::format("detokenize: id {} is not in the vocabulary", id));
    }
    if (mode_ == TokenizerMode::word && i > 0) out.push_back(' ');
    out += id_to_unit_[id];
  }
  return out;
}

std::vector<std::string> TokenizerSpec::words() const {
  std::vector<std::string> out;
  if (mode_ != TokenizerMode::word) return out;
  for (TokenId id = 0; id < id_to_unit_.size(); ++id) {
    if (!is_reserved(id) && !id_to_unit_[id].empty()) out.push_back(id_to_unit_[id]);
  }
  return out;
}

}  // namespace qrkit
