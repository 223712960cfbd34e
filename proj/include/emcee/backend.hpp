#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emcee/conversation.hpp"

namespace emcee {

using LogitVector = std::vector<double>;

inline constexpr std::string_view kBos = "<bos>";
inline constexpr std::string_view kEos = "<eos>";
inline constexpr std::string_view kSep = "<sep>";
inline constexpr std::string_view kUnk = "<unk>";

/// Ordered token list with the reserved tokens <bos>, <eos>, <sep>, <unk>.
/// Words are mapped with the evaluation tokenizer; unknown words become <unk>.
class Vocabulary {
 public:
  /// Takes an ordered token list; throws ValidationError if a reserved token
  /// is missing or a token repeats.
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Reserved tokens first (<bos>, <eos>, <sep>, <unk>), then the distinct
  /// tokenizer tokens of `texts` in lexicographic order.
  static Vocabulary from_texts(std::span<const std::string> texts);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(TokenId id) const;
  bool contains(TokenId id) const { return id >= 0 && static_cast<std::size_t>(id) < size(); }
  /// Id of a token string, or <unk>.
  TokenId id_of(std::string_view token) const;
  bool knows(std::string_view token) const { return index_.contains(std::string(token)); }

  TokenId bos() const { return bos_; }
  TokenId eos() const { return eos_; }
  TokenId sep() const { return sep_; }
  TokenId unk() const { return unk_; }
  bool is_reserved(TokenId id) const { return id == bos_ || id == eos_ || id == sep_ || id == unk_; }

  std::vector<TokenId> encode(std::string_view text) const;
  /// Joins token strings with the evaluation tokenizer's spacing rules.
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId bos_ = -1, eos_ = -1, sep_ = -1, unk_ = -1;
};

enum class BackendKind { toy_ngram, remote, echo };

std::string_view to_string(BackendKind kind);

struct BackendDescriptor {
  BackendKind kind;
  std::vector<std::string> vocab;
  std::uint64_t version;
};

/// A generation model V_r: next-token logits over a fixed vocabulary plus a
/// finetune step that produces a new version.
///
/// logits() is const and may be called concurrently on one version.
/// finetune() is exclusive.
class Backend {
 public:
  virtual ~Backend() = default;

  virtual BackendKind kind() const = 0;
  virtual const Vocabulary& vocab() const = 0;
  virtual std::uint64_t version() const = 0;

  /// Finite logits for every vocabulary entry given a token prefix.
  virtual LogitVector logits(std::span<const TokenId> prefix) const = 0;

  /// Trains on `dataset` and returns the new version id.
  virtual std::uint64_t finetune(const Dataset& dataset, int epochs) = 0;

  /// Token prefix for a rendered prompt, ending at the start of a fresh turn.
  /// Default: tokenize(prompt) followed by <bos>.
  virtual std::vector<TokenId> encode_prompt(std::string_view prompt) const;

  /// Tokens that end a turn: <eos> ends the turn, <sep> ends the conversation.
  virtual std::vector<TokenId> stop_tokens() const;

  /// Tokens never sampled into a turn. Default: <bos> and <unk>, which only
  /// carry smoothing mass and would decode to markup.
  virtual std::vector<TokenId> suppressed_tokens() const;

  /// Persists the current version under `dir` and returns a checkpoint id
  /// (a file name relative to `dir`).
  virtual std::string save_checkpoint(const std::filesystem::path& dir) const = 0;

  std::vector<TokenId> tokenize_text(std::string_view text) const { return vocab().encode(text); }
  std::string detokenize(std::span<const TokenId> ids) const { return vocab().decode(ids); }

  BackendDescriptor descriptor() const { return {kind(), vocab().tokens(), version()}; }
};

/// Token ids of a turn: the cached ids when present and in range, else a fresh encoding.
std::vector<TokenId> turn_tokens(const Turn& turn, const Vocabulary& vocab);

}  // namespace emcee
