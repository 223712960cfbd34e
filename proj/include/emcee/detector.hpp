#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "emcee/conversation.hpp"
#include "json.hpp"

namespace emcee {

enum class Label { correct = 0, incorrect = 1 };

struct LabeledSentence {
  std::string sentence;
  Label label = Label::correct;
  friend bool operator==(const LabeledSentence&, const LabeledSentence&) = default;
};

struct LabeledStats {
  std::size_t correct = 0;
  std::size_t incorrect = 0;
  std::size_t duplicates_removed = 0;
  std::size_t total() const { return correct + incorrect; }
};

struct LabeledSet {
  std::vector<LabeledSentence> sentences;
  LabeledStats stats;
};

/// Reads CSV (header "sentence,label", RFC 4180 quoting) or JSONL
/// ({"sentence", "label"}). JSONL is detected by a ".jsonl" extension or a
/// first non-blank character '{'. With `dedupe`, exact duplicate sentences
/// after the first are dropped.
LabeledSet load_labeled_sentences(const std::filesystem::path& path, bool dedupe);
LabeledSet parse_labeled_sentences(std::string_view text, bool jsonl, bool dedupe,
                                   const std::string& source = "<memory>");

struct DetectorVerdict {
  bool flagged = false;
  double confidence = 0;  // in [0, 1]
};

enum class Granularity { whole_turn, per_sentence };
enum class UnknownBehavior { keep, flag };

struct FilterPolicy {
  Granularity granularity = Granularity::per_sentence;
  double threshold = 0.5;  // probabilistic detectors flag at p >= threshold
  UnknownBehavior unknown_behavior = UnknownBehavior::keep;

  void validate() const;
};

std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view name);
std::string_view to_string(UnknownBehavior b);
UnknownBehavior unknown_behavior_from_string(std::string_view name);

/// Hallucination classifier. classify() may be called concurrently.
class Detector {
 public:
  virtual ~Detector() = default;
  virtual DetectorVerdict classify(std::string_view text) const = 0;
};

/// Lowercase, trim, collapse whitespace runs to one space.
std::string normalize_sentence(std::string_view text);

/// Splits on '.', '!' or '?' followed by whitespace or end of text; the
/// terminator stays with its sentence. Blank pieces are dropped.
std::vector<std::string> split_sentences(std::string_view text);

/// Exact normalized-match lookup against a labeled table.
class RuleDetector final : public Detector {
 public:
  RuleDetector(std::span<const LabeledSentence> table, UnknownBehavior unknown = UnknownBehavior::keep);

  DetectorVerdict classify(std::string_view text) const override;
  std::size_t size() const { return table_.size(); }

 private:
  std::unordered_map<std::string, Label> table_;
  UnknownBehavior unknown_;
};

/// Flags nothing. Used for the no-filtering ablation.
class PassThroughDetector final : public Detector {
 public:
  DetectorVerdict classify(std::string_view) const override { return {false, 1.0}; }
};

/// Client for POST /v1/classify {"text"} -> {"p_hallucination": p}.
class RemoteDetector final : public Detector {
 public:
  RemoteDetector(std::string base_url, double threshold = 0.5, int max_attempts = 3,
                 std::chrono::seconds timeout = std::chrono::seconds(30));

  /// flagged = p >= threshold; confidence = p when flagged, 1 - p otherwise.
  /// Throws DetectorError when the service cannot be reached.
  DetectorVerdict classify(std::string_view text) const override;

 private:
  std::string base_url_;
  double threshold_;
  int max_attempts_;
  std::chrono::seconds timeout_;
};

/// Applies the policy granularity: a machine turn is flagged when the whole
/// text is flagged, or (per_sentence) when any of its sentences is.
/// Flagged pieces are appended to `flagged_parts` when given.
bool turn_flagged(const Detector& detector, const FilterPolicy& policy, std::string_view text,
                  std::vector<std::string>* flagged_parts = nullptr);

struct ConversationFilterRecord {
  std::string id;
  std::size_t pairs_in = 0;
  std::size_t pairs_removed = 0;
  bool dropped = false;
  std::vector<std::string> flagged_texts;
};

struct FilterReport {
  std::vector<ConversationFilterRecord> conversations;
  std::size_t pairs_in = 0;
  std::size_t pairs_removed = 0;
  std::size_t conversations_dropped = 0;
};

void to_json(nlohmann::json& j, const FilterReport& report);

struct FilterResult {
  Dataset clean;
  FilterReport report;
};

/// Removes every (human, machine) pair whose machine turn is flagged, keeping
/// the order of the rest, and drops conversations left without pairs. A
/// trailing unanswered human turn is kept. Detector errors abort the pass.
/// With workers > 1 turns are classified concurrently; output order is unchanged.
FilterResult filter_dataset(const Dataset& dataset, const Detector& detector,
                            const FilterPolicy& policy, std::size_t workers = 1);

/// Fraction of sentences where flagged == (label is incorrect).
double evaluate_detector(const Detector& detector, std::span<const LabeledSentence> labeled);

}  // namespace emcee
