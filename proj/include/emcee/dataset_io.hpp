#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emcee/conversation.hpp"
#include "json.hpp"

namespace emcee {

// Conversation JSONL: one object per line,
//   {"context_ref":..., "id":..., "meta":{...}, "round":..., "turns":[{"role":..., "text":...}]}
// Keys are written in this (sorted) order; the token cache is never written.
nlohmann::json conversation_to_json(const Conversation& conversation);
Conversation conversation_from_json(const nlohmann::json& j);

std::string dataset_to_jsonl(const Dataset& dataset);
Dataset dataset_from_jsonl(std::string_view text, const std::string& source = "<memory>");

/// Reads a conversation JSONL file. Provenance is human when every
/// conversation is round 0, synthetic otherwise.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const Dataset& dataset, const std::filesystem::path& path);

nlohmann::json context_to_json(const ExplanationContext& context);
ExplanationContext context_from_json(const nlohmann::json& j);

/// Explanation contexts keyed by id.
class ContextRegistry {
 public:
  ContextRegistry() = default;
  explicit ContextRegistry(std::vector<ExplanationContext> contexts);

  /// Loads a JSON file holding either an array of contexts or {"contexts": [...]}.
  /// Relative asset paths are resolved against the file's directory and must exist.
  static ContextRegistry load(const std::filesystem::path& path);

  const std::vector<ExplanationContext>& contexts() const { return contexts_; }
  const ExplanationContext* find(std::string_view id) const;
  /// Throws NotFoundError for an unknown id.
  const ExplanationContext& at(std::string_view id) const;

  std::vector<const ExplanationContext*> by_method(XaiMethod method) const;

  bool empty() const { return contexts_.empty(); }
  std::size_t size() const { return contexts_.size(); }

 private:
  std::vector<ExplanationContext> contexts_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// True when `ref` looks like a URI ("scheme://...") rather than a file path.
bool is_uri(std::string_view ref);

/// Throws ContextError unless `ref` is a URI or an existing file.
void require_asset(const std::string& context_id, const std::string& ref);

struct SplitSpec {
  std::size_t gen_demos = 0;
  std::size_t eval_demos = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
};

struct DatasetSplit {
  std::vector<Conversation> gen_demos;
  std::vector<Conversation> eval_demos;
  std::vector<Conversation> val;
  std::vector<Conversation> test;
};

/// Seeded partition of a human corpus. Generation demonstrations are drawn one
/// per XAI method present, so gen_demos must be 0 or the number of methods.
DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed, const SplitSpec& spec,
                           const ContextRegistry& contexts);

struct ConversationStats {
  double mean_utterances_per_conversation = 0;
  double mean_words_per_utterance = 0;
  std::size_t conversations = 0;
  std::size_t utterances = 0;
  std::size_t words = 0;
};

/// Word counts use the evaluation tokenizer (see metrics.hpp).
ConversationStats conversation_stats(const Dataset& dataset);

}  // namespace emcee
