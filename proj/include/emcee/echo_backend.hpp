#pragma once

#include <functional>
#include <string>

#include "emcee/backend.hpp"

namespace emcee {

/// Fixture backend whose replies are a fixed function of the prompt.
///
/// The prompt is everything before the last <bos> in the prefix; it is decoded
/// back to (normalized) text and handed to the reply function. The target
/// reply's next token gets logit 0, every other token kMissLogit, so any
/// sampler reproduces the reply almost surely and greedy decoding exactly.
class EchoBackend final : public Backend {
 public:
  using ReplyFn = std::function<std::string(const std::string& prompt)>;

  static constexpr double kMissLogit = -200.0;

  EchoBackend(Vocabulary vocab, ReplyFn reply);

  /// Reply function that repeats the last "User:" utterance of the prompt.
  static ReplyFn repeat_last_user();

  BackendKind kind() const override { return BackendKind::echo; }
  const Vocabulary& vocab() const override { return vocab_; }
  std::uint64_t version() const override { return version_; }
  LogitVector logits(std::span<const TokenId> prefix) const override;
  /// No-op apart from the version bump.
  std::uint64_t finetune(const Dataset& dataset, int epochs) override;
  std::string save_checkpoint(const std::filesystem::path& dir) const override;

 private:
  Vocabulary vocab_;
  ReplyFn reply_;
  std::uint64_t version_ = 1;
};

}  // namespace emcee
