#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "qrkit/attention.hpp"

namespace qrkit {

enum class TokenizerMode { byte, word };

/// One tokenized unit and the byte range of `text` it came from.
struct TokenPiece {
  TokenId id;
  std::size_t begin;
  std::size_t end;
};

/// Byte-level or whitespace-word tokenizer. Reserved ids never come out of
/// `tokenize`; only prompt assembly inserts them.
class TokenizerSpec {
 public:
  /// Reserved 0/1/2 = bos/eos/sep, byte b -> id 3 + b.
  static TokenizerSpec byte_level();
  /// Reserved 0/1/2, then `words` in order from id 3.
  static TokenizerSpec word_level(const std::vector<std::string>& words);
  static TokenizerSpec word_level(std::unordered_map<std::string, TokenId> vocab, TokenId bos,
                                  TokenId eos, TokenId sep);

  static TokenizerSpec from_json(const nlohmann::json& j);
  static TokenizerSpec load(const std::filesystem::path& path);
  nlohmann::json to_json() const;

  TokenizerMode mode() const noexcept { return mode_; }
  TokenId bos() const noexcept { return bos_; }
  TokenId eos() const noexcept { return eos_; }
  TokenId sep() const noexcept { return sep_; }
  bool is_reserved(TokenId id) const noexcept { return id == bos_ || id == eos_ || id == sep_; }

  /// One past the largest id in use.
  std::size_t vocab_size() const noexcept { return vocab_size_; }

  std::vector<TokenId> tokenize(std::string_view text) const;
  std::vector<TokenPiece> tokenize_with_offsets(std::string_view text) const;

  /// Byte mode concatenates; word mode joins with single spaces. Reserved
  /// ids render as <bos>/<eos>/<sep>.
  std::string detokenize(std::span<const TokenId> ids) const;

  /// Word mode only: all non-reserved vocabulary words in id order.
  std::vector<std::string> words() const;

  std::optional<TokenId> lookup(std::string_view unit) const;

 private:
  void finalize();

  TokenizerMode mode_ = TokenizerMode::byte;
  TokenId bos_ = 0, eos_ = 1, sep_ = 2;
  std::unordered_map<std::string, TokenId> vocab_;
  std::vector<std::string> id_to_unit_;  // indexed by id; empty for gaps
  std::size_t vocab_size_ = 0;
};

}  // namespace qrkit
