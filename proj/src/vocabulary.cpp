#include "emcee/backend.hpp"

#include <algorithm>
#include <set>

#include "emcee/error.hpp"
#include "emcee/metrics.hpp"

namespace emcee {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.empty()) throw ValidationError("vocabulary is empty");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second) {
      throw ValidationError("vocabulary repeats token '" + tokens_[i] + "'");
    }
  }
  auto reserved = [&](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw ValidationError("vocabulary lacks reserved token " + std::string(name));
    }
    return it->second;
  };
  bos_ = reserved(kBos);
  eos_ = reserved(kEos);
  sep_ = reserved(kSep);
  unk_ = reserved(kUnk);
}

Vocabulary Vocabulary::from_texts(std::span<const std::string> texts) {
  std::set<std::string> words;
  for (const auto& text : texts) {
    for (auto& tok : tokenize(text)) words.insert(std::move(tok));
  }
  std::vector<std::string> tokens{std::string(kBos), std::string(kEos), std::string(kSep),
                                  std::string(kUnk)};
  for (const auto& w : words) {
    if (w != kBos && w != kEos && w != kSep && w != kUnk) tokens.push_back(w);
  }
  return Vocabulary(std::move(tokens));
}

const std::string& Vocabulary::token(TokenId id) const {
  if (!contains(id)) throw ValidationError("token id " + std::to_string(id) + " out of vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? unk_ : it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(id_of(tok));
  return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (TokenId id : ids) words.push_back(token(id));
  return join_tokens(words);
}

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::toy_ngram:
      return "toy_ngram";
    case BackendKind::remote:
      return "remote";
    case BackendKind::echo:
      return "echo";
  }
  return "?";
}

std::vector<TokenId> Backend::encode_prompt(std::string_view prompt) const {
  auto ids = tokenize_text(prompt);
  ids.push_back(vocab().bos());
  return ids;
}

std::vector<TokenId> Backend::stop_tokens() const { return {vocab().eos(), vocab().sep()}; }

std::vector<TokenId> Backend::suppressed_tokens() const { return {vocab().bos(), vocab().unk()}; }

std::vector<TokenId> turn_tokens(const Turn& turn, const Vocabulary& vocab) {
  if (turn.tokens &&
      std::all_of(turn.tokens->begin(), turn.tokens->end(),
                  [&](TokenId id) { return vocab.contains(id); })) {
    return *turn.tokens;
  }
  return vocab.encode(turn.text);
}

}  // namespace emcee
