#include "emcee/fewshot.hpp"

#include <algorithm>

#include "emcee/error.hpp"
#include "emcee/prompt.hpp"

namespace emcee {

using nlohmann::json;

std::string generate_reply(const Backend& backend, const std::string& prompt,
                           const PenaltyConfig& sampler, std::size_t top_k, std::size_t max_tokens,
                           Rng& rng, PenaltySet* penalized) {
  PenaltySet local(backend.vocab().size());
  PenaltySet& g = penalized ? *penalized : local;
  const StopSpec stop{backend.stop_tokens(), max_tokens, top_k};
  const auto out = generate_turn(backend, backend.encode_prompt(prompt), sampler, g, stop, rng);
  return backend.detokenize(out.tokens);
}

std::vector<FewshotRow> evaluate_fewshot(const Backend& backend, const ContextRegistry& contexts,
                                         std::span<const Conversation> eval_demos,
                                         std::span<const Conversation> test,
                                         std::span<const int> k_values,
                                         const FewshotOptions& options) {
  options.settings.sampler.validate();
  for (int k : k_values) {
    if (k < 0 || static_cast<std::size_t>(k) > kMaxDemonstrations) {
      throw ConfigError("shot count " + std::to_string(k) + " is outside 0..3");
    }
    if (static_cast<std::size_t>(k) > eval_demos.size()) {
      throw ConfigError("shot count " + std::to_string(k) + " exceeds the " +
                        std::to_string(eval_demos.size()) + " available demonstrations");
    }
  }

  std::vector<FewshotRow> rows;
  for (int k : k_values) {
    PromptSpec spec;
    spec.instruction = options.instruction;
    spec.demonstrations.assign(eval_demos.begin(), eval_demos.begin() + k);
    spec.next_role = Role::machine;

    std::vector<std::pair<std::string, std::string>> pairs;
    for (std::size_t c = 0; c < test.size(); ++c) {
      const auto& conversation = test[c];
      spec.context = contexts.at(conversation.context_ref);
      const auto& turns = conversation.turns;
      for (std::size_t i = 0; i + 1 < turns.size(); ++i) {
        if (turns[i].role != Role::human || turns[i + 1].role != Role::machine) continue;
        spec.history.assign(turns.begin(), turns.begin() + static_cast<std::ptrdiff_t>(i) + 1);
        Rng rng(derive_seed(options.seed, static_cast<std::uint64_t>(k), c * 1024 + i));
        pairs.emplace_back(generate_reply(backend, assemble_prompt(spec), options.settings.sampler,
                                          options.settings.top_k,
                                          options.settings.max_reply_tokens, rng),
                           turns[i + 1].text);
      }
    }
    rows.push_back({k, score_responses(pairs)});
  }
  return rows;
}

std::string format_fewshot_table(std::span<const FewshotRow> rows) {
  std::vector<std::pair<std::string, ScoreReport>> labeled;
  for (const auto& row : rows) labeled.emplace_back(std::to_string(row.shots), row.report);
  return format_score_table("Shot Num", labeled);
}

json fewshot_to_json(std::span<const FewshotRow> rows) {
  json out = json::array();
  for (const auto& row : rows) out.push_back({{"shots", row.shots}, {"scores", row.report}});
  return out;
}

}  // namespace emcee
