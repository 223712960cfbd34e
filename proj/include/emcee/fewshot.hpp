#pragma once

#include <span>
#include <string>
#include <vector>

#include "emcee/backend.hpp"
#include "emcee/config.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/metrics.hpp"
#include "emcee/sampler.hpp"
#include "json.hpp"

namespace emcee {

/// Generates one reply for a rendered prompt. Decoding stops at a stop token
/// or after `max_tokens`. `penalized` defaults to a fresh set.
std::string generate_reply(const Backend& backend, const std::string& prompt,
                           const PenaltyConfig& sampler, std::size_t top_k, std::size_t max_tokens,
                           Rng& rng, PenaltySet* penalized = nullptr);

struct FewshotOptions {
  std::string instruction = default_answer_instruction();
  EvalSettings settings;
  std::uint64_t seed = 0;
};

struct FewshotRow {
  int shots = 0;
  ScoreReport report;
};

/// Teacher-forced replay of every test conversation: for each human turn the
/// prompt holds the instruction, the conversation's context, the first k
/// demonstrations of `eval_demos` and the reference history up to that turn;
/// the generated reply is scored against the reference reply.
/// Throws ConfigError when k is outside 0..3 or exceeds |eval_demos|.
std::vector<FewshotRow> evaluate_fewshot(const Backend& backend, const ContextRegistry& contexts,
                                         std::span<const Conversation> eval_demos,
                                         std::span<const Conversation> test,
                                         std::span<const int> k_values,
                                         const FewshotOptions& options = {});

/// Rows labeled by shot count under a "Shot Num" header.
std::string format_fewshot_table(std::span<const FewshotRow> rows);
nlohmann::json fewshot_to_json(std::span<const FewshotRow> rows);

}  // namespace emcee
