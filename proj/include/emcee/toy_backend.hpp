#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "emcee/backend.hpp"
#include "json.hpp"

namespace emcee {

/// Additively smoothed n-gram counts:
///   p(t | ctx) = (count(ctx, t) + alpha) / (sum_j count(ctx, j) + alpha * |V|)
/// where ctx is the previous order-1 tokens.
class ToyNgramModel {
 public:
  ToyNgramModel(std::size_t vocab_size, int order, double alpha);

  int order() const { return order_; }
  double alpha() const { return alpha_; }
  std::size_t vocab_size() const { return vocab_size_; }

  /// Counts every n-gram ending at positions >= order-1 of `sequence`, each
  /// with the given weight. Callers pad the sequence start with <bos>.
  void add_sequence(std::span<const TokenId> sequence, double weight);

  double count(std::span<const TokenId> context, TokenId token) const;
  double context_total(std::span<const TokenId> context) const;
  double probability(std::span<const TokenId> context, TokenId token) const;

  /// Log-probabilities for the context formed by the last order-1 tokens of
  /// `prefix`, left-padded with `bos`.
  LogitVector logits(std::span<const TokenId> prefix, TokenId bos) const;

  nlohmann::json to_json() const;
  static ToyNgramModel from_json(const nlohmann::json& j);

  friend bool operator==(const ToyNgramModel&, const ToyNgramModel&) = default;

 private:
  struct ContextCounts {
    double total = 0;
    std::map<TokenId, double> counts;
    friend bool operator==(const ContextCounts&, const ContextCounts&) = default;
  };

  std::vector<TokenId> context_of(std::span<const TokenId> prefix, TokenId bos) const;

  std::size_t vocab_size_;
  int order_;
  double alpha_;
  std::map<std::vector<TokenId>, ContextCounts> table_;
};

struct ToyOptions {
  int order = 3;
  double alpha = 1e-4;
};

/// Desk-scale stand-in for the vision-language model. Text only: each turn is
/// one training sequence <bos>^(order-1) tokens <eos>, and every conversation
/// closes with <bos>^(order-1) <sep>. Every version stays loadable.
class ToyBackend final : public Backend {
 public:
  ToyBackend(Vocabulary vocab, ToyNgramModel model, std::uint64_t version = 1);

  /// Vocabulary from `sentences` (plus `extra_vocab_texts`), counts from `sentences`.
  static ToyBackend from_corpus(std::span<const std::string> sentences, ToyOptions options = {},
                                std::span<const std::string> extra_vocab_texts = {});

  static ToyBackend load_checkpoint(const std::filesystem::path& path);

  BackendKind kind() const override { return BackendKind::toy_ngram; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::uint64_t version() const override { return current_; }
  LogitVector logits(std::span<const TokenId> prefix) const override;
  std::uint64_t finetune(const Dataset& dataset, int epochs) override;
  std::vector<TokenId> encode_prompt(std::string_view prompt) const override;
  std::string save_checkpoint(const std::filesystem::path& dir) const override;

  LogitVector logits_at(std::uint64_t version, std::span<const TokenId> prefix) const;
  const ToyNgramModel& model(std::uint64_t version) const;
  const ToyNgramModel& model() const { return model(current_); }
  std::vector<std::uint64_t> versions() const;

  /// Training sequences for one conversation (token cache honored).
  std::vector<std::vector<TokenId>> training_sequences(const Conversation& conversation) const;

 private:
  Vocabulary vocab_;
  std::map<std::uint64_t, std::shared_ptr<const ToyNgramModel>> models_;
  std::uint64_t current_;
};

}  // namespace emcee
