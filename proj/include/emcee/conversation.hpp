#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace emcee {

using TokenId = std::int32_t;

enum class Role { human, machine };

std::string_view to_string(Role role);
Role role_from_string(std::string_view name);

enum class XaiMethod { lime, grad_cam, integrated_gradients, shap };

inline constexpr XaiMethod kAllXaiMethods[] = {XaiMethod::lime, XaiMethod::grad_cam,
                                               XaiMethod::integrated_gradients, XaiMethod::shap};

/// Canonical names: "LIME", "GradCAM", "IntegratedGradients", "SHAP".
std::string_view to_string(XaiMethod method);
XaiMethod xai_method_from_string(std::string_view name);

struct Turn {
  Role role = Role::human;
  std::string text;
  // Backend token ids for `text`, kept in memory only; never serialized.
  std::optional<std::vector<TokenId>> tokens;

  /// Throws ValidationError when the text is blank.
  void validate() const;

  // The token cache is not part of a turn's identity.
  friend bool operator==(const Turn& a, const Turn& b) {
    return a.role == b.role && a.text == b.text;
  }
};

struct Conversation {
  std::string id;
  std::string context_ref;
  std::vector<Turn> turns;
  int round = 0;  // 0 = human-collected
  std::map<std::string, std::string> meta;

  /// Checks turn validity and human/machine alternation starting with human.
  void validate() const;

  /// Number of complete (human, machine) pairs.
  std::size_t pair_count() const { return turns.size() / 2; }

  friend bool operator==(const Conversation&, const Conversation&) = default;
};

/// The static-explanation bundle displayed next to a conversation.
struct ExplanationContext {
  std::string id;
  XaiMethod xai_method = XaiMethod::lime;
  std::string task_description;
  std::string model_description;
  std::string input_image;  // path or URI
  std::string model_output;
  std::string explanation_image;  // path or URI
  std::string explanation_description;

  /// Requires the id and all six display fields to be non-blank.
  void validate() const;

  friend bool operator==(const ExplanationContext&, const ExplanationContext&) = default;
};

enum class Provenance { human, synthetic };

struct Dataset {
  std::vector<Conversation> conversations;
  Provenance provenance = Provenance::human;
  int round = 0;

  /// Validates every conversation and id uniqueness.
  void validate() const;

  std::size_t size() const { return conversations.size(); }
  bool empty() const { return conversations.empty(); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

bool is_blank(std::string_view text);

}  // namespace emcee
