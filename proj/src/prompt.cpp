#include "emcee/prompt.hpp"

#include "emcee/dataset_io.hpp"
#include "emcee/error.hpp"

namespace emcee {

namespace {

std::string one_line(std::string_view text) {
  std::string out(text);
  for (char& ch : out) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return out;
}

void render_turn(std::string& out, const Turn& turn) {
  out += turn.role == Role::human ? kUserPrefix : kAssistantPrefix;
  out += ' ';
  out += one_line(turn.text);
  out += '\n';
}

}  // namespace

std::string render_context_block(const ExplanationContext& c) {
  std::string out = "[Context]\n";
  out += "XAI method: " + std::string(to_string(c.xai_method)) + "\n";
  out += "Task description: " + one_line(c.task_description) + "\n";
  out += "Model description: " + one_line(c.model_description) + "\n";
  out += "Model input: " + one_line(c.input_image) + "\n";
  out += "Model output: " + one_line(c.model_output) + "\n";
  out += "Explanation: " + one_line(c.explanation_image) + "\n";
  out += "Explanation description: " + one_line(c.explanation_description) + "\n";
  return out;
}

std::string assemble_prompt(const PromptSpec& spec) {
  if (spec.demonstrations.size() > kMaxDemonstrations) {
    throw ValidationError("prompt has " + std::to_string(spec.demonstrations.size()) +
                          " demonstrations; at most 3 are allowed");
  }
  spec.context.validate();
  require_asset(spec.context.id, spec.context.input_image);
  require_asset(spec.context.id, spec.context.explanation_image);

  std::string out = one_line(spec.instruction);
  out += "\n\n";
  out += render_context_block(spec.context);

  for (std::size_t k = 0; k < spec.demonstrations.size(); ++k) {
    const auto& demo = spec.demonstrations[k];
    demo.validate();
    out += "\n[Demonstration " + std::to_string(k + 1) + "]\n";
    for (const auto& turn : demo.turns) render_turn(out, turn);
  }

  out += "\n[Conversation]\n";
  for (const auto& turn : spec.history) {
    turn.validate();
    render_turn(out, turn);
  }
  out += spec.next_role == Role::human ? kUserPrefix : kAssistantPrefix;
  return out;
}

}  // namespace emcee
