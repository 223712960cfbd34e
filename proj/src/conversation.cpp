#include "emcee/conversation.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

#include "emcee/error.hpp"

namespace emcee {

std::string_view to_string(Role role) { return role == Role::human ? "human" : "machine"; }

Role role_from_string(std::string_view name) {
  if (name == "human") return Role::human;
  if (name == "machine") return Role::machine;
  throw ValidationError("unknown role '" + std::string(name) + "'");
}

std::string_view to_string(XaiMethod method) {
  switch (method) {
    case XaiMethod::lime:
      return "LIME";
    case XaiMethod::grad_cam:
      return "GradCAM";
    case XaiMethod::integrated_gradients:
      return "IntegratedGradients";
    case XaiMethod::shap:
      return "SHAP";
  }
  return "?";
}

XaiMethod xai_method_from_string(std::string_view name) {
  for (XaiMethod m : kAllXaiMethods) {
    if (to_string(m) == name) return m;
  }
  throw ValidationError("unknown XAI method '" + std::string(name) + "'");
}

bool is_blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

void Turn::validate() const {
  if (is_blank(text)) throw ValidationError("turn text is empty");
}

void Conversation::validate() const {
  if (id.empty()) throw ValidationError("conversation without id");
  for (std::size_t i = 0; i < turns.size(); ++i) {
    const Role expected = i % 2 == 0 ? Role::human : Role::machine;
    if (turns[i].role != expected) {
      throw ValidationError("conversation '" + id + "': turn " + std::to_string(i) + " is " +
                            std::string(to_string(turns[i].role)) + ", expected " +
                            std::string(to_string(expected)));
    }
    if (is_blank(turns[i].text)) {
      throw ValidationError("conversation '" + id + "': turn " + std::to_string(i) +
                            " has empty text");
    }
  }
  if (round < 0) throw ValidationError("conversation '" + id + "': negative round");
}

void ExplanationContext::validate() const {
  if (is_blank(id)) throw ContextError("explanation context without id");
  const std::pair<const char*, const std::string*> fields[] = {
      {"task_description", &task_description}, {"model_description", &model_description},
      {"input_image", &input_image},           {"model_output", &model_output},
      {"explanation_image", &explanation_image},
      {"explanation_description", &explanation_description}};
  for (const auto& [name, value] : fields) {
    if (is_blank(*value)) {
      throw ContextError("context '" + id + "': field " + name + " is empty");
    }
  }
}

void Dataset::validate() const {
  std::unordered_set<std::string> seen;
  for (const auto& c : conversations) {
    c.validate();
    if (!seen.insert(c.id).second) {
      throw ValidationError("duplicate conversation id '" + c.id + "'");
    }
  }
}

}  // namespace emcee
