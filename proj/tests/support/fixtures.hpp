#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "emcee/backend.hpp"
#include "emcee/conversation.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/detector.hpp"
#include "emcee/rng.hpp"

namespace emcee::testing {

std::filesystem::path source_path(const std::string& relative);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

using Pairs = std::vector<std::pair<std::string, std::string>>;

Conversation make_conversation(std::string id, std::string context_ref, const Pairs& pairs,
                               int round = 0);

/// The four shipped contexts (one per XAI method) with their image assets.
ContextRegistry shipped_contexts();

/// Non-comment lines of the shipped seed corpus.
std::vector<std::string> seed_sentences();

/// Rows of the shipped labeled-sentence table.
std::vector<LabeledSentence> hallucination_table();

/// Forwards to another backend and keeps a copy of every finetune dataset.
class RecordingBackend final : public Backend {
 public:
  explicit RecordingBackend(Backend& inner) : inner_(inner) {}
  BackendKind kind() const override { return inner_.kind(); }
  const Vocabulary& vocab() const override { return inner_.vocab(); }
  std::uint64_t version() const override { return inner_.version(); }
  LogitVector logits(std::span<const TokenId> prefix) const override { return inner_.logits(prefix); }
  std::uint64_t finetune(const Dataset& dataset, int epochs) override {
    finetuned.push_back(dataset);
    return inner_.finetune(dataset, epochs);
  }
  std::vector<TokenId> encode_prompt(std::string_view prompt) const override {
    return inner_.encode_prompt(prompt);
  }
  std::vector<TokenId> stop_tokens() const override { return inner_.stop_tokens(); }
  std::vector<TokenId> suppressed_tokens() const override { return inner_.suppressed_tokens(); }
  std::string save_checkpoint(const std::filesystem::path& dir) const override {
    return inner_.save_checkpoint(dir);
  }

  std::vector<Dataset> finetuned;

 private:
  Backend& inner_;
};

/// Toy backend over the shipped seed corpus with the given smoothing.
std::unique_ptr<Backend> desk_toy_backend(double alpha = 1e-4);

std::string read_file(const std::filesystem::path& path);

// Hand-rolled generators for property tests.
std::string random_word(Rng& rng);
std::string random_sentence(Rng& rng, std::size_t min_words, std::size_t max_words);
/// Tokens drawn from a small alphabet so n-grams collide often.
std::vector<std::string> random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet);
Conversation random_conversation(Rng& rng, std::string id, std::string context_ref, int round);

}  // namespace emcee::testing
