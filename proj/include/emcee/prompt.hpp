#pragma once

#include <string>
#include <vector>

#include "emcee/conversation.hpp"

namespace emcee {

inline constexpr std::size_t kMaxDemonstrations = 3;

struct PromptSpec {
  std::string instruction;
  ExplanationContext context;
  std::vector<Conversation> demonstrations;  // 0..3
  std::vector<Turn> history;
  // Whose turn the cue at the end of the prompt opens.
  Role next_role = Role::machine;
};

// Rendered layout (every line ends in '\n' except the final cue):
//
//   <instruction>
//
//   [Context]
//   XAI method: <LIME|GradCAM|IntegratedGradients|SHAP>
//   Task description: ...
//   Model description: ...
//   Model input: <input_image>
//   Model output: ...
//   Explanation: <explanation_image>
//   Explanation description: ...
//
//   [Demonstration k]            (one block per demonstration, k = 1..)
//   User: <x_1>
//   Assistant: <y_1>
//   ...
//
//   [Conversation]
//   User: <history...>
//   Assistant:                   ("User:" when next_role is human)
//
// Newlines inside field values and turn texts are rendered as single spaces.
inline constexpr const char* kUserPrefix = "User:";
inline constexpr const char* kAssistantPrefix = "Assistant:";

/// Pure function of `spec`. Throws ValidationError for more than three
/// demonstrations or an invalid demonstration, ContextError for an invalid
/// context or an unresolvable image reference.
std::string assemble_prompt(const PromptSpec& spec);

/// The instruction + context block prefix shared by every prompt for `context`.
std::string render_context_block(const ExplanationContext& context);

}  // namespace emcee
