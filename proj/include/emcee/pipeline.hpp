#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "emcee/backend.hpp"
#include "emcee/config.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/detector.hpp"
#include "emcee/error.hpp"
#include "emcee/metrics.hpp"
#include "json.hpp"

namespace emcee {

/// Human-authored material the loop draws on besides the contexts.
struct PipelineData {
  std::vector<Conversation> gen_demos;   // at most one per XAI method is used
  std::vector<Conversation> eval_demos;  // validation demonstrations
  std::vector<Conversation> val;         // validation split; empty skips scoring
};

struct RoundMetrics {
  std::size_t generated = 0;
  std::size_t clean = 0;
  double distinct1_generated = 0;
  double distinct2_generated = 0;
  double distinct1_clean = 0;
  double distinct2_clean = 0;
  std::optional<ScoreReport> val;
};

void to_json(nlohmann::json& j, const RoundMetrics& m);

struct RoundState {
  int round = 0;
  std::uint64_t version_before = 0;
  std::uint64_t version_after = 0;
  Dataset generated;
  Dataset clean;
  FilterReport filter;
  RoundMetrics metrics;
  std::string directory;   // relative to the output directory; empty when not persisted
  std::string checkpoint;  // relative to the round directory
};

/// Raised when the filtered dataset of a round is empty. Nothing is finetuned.
class RoundAborted : public Error {
 public:
  RoundAborted(int round, FilterReport report);
  int round() const { return round_; }
  const FilterReport& report() const { return report_; }

 private:
  int round_;
  FilterReport report_;
};

struct RoundSummary {
  int round = 0;
  std::uint64_t version_before = 0;
  std::uint64_t version_after = 0;
  std::string directory;
  std::string checkpoint;
  std::size_t pairs_removed = 0;
  RoundMetrics metrics;
};

struct PipelineReport {
  std::vector<RoundSummary> rounds;
  std::optional<std::string> aborted;  // reason, when a round aborted

  nlohmann::json to_json() const;
};

/// Self-plays N conversations for round `round`, quota by quota in method
/// order. Both sides come from `backend` under the round's shared penalty set.
/// Throws ConfigError when a method with a nonzero quota has no context.
Dataset generate_round(const Backend& backend, const PipelineConfig& config,
                       const ContextRegistry& contexts, int round,
                       std::span<const Conversation> gen_demos = {});

/// One generate -> filter -> finetune loop over a single backend.
///
/// With an output directory, each round writes
///   <out>/round-RR-<first 12 hex of sha256(generated.jsonl)>/
///     generated.jsonl clean.jsonl filter_report.json metrics.json
///     finetune_audit.json <checkpoint file>
/// and the run appends one line per finetune to <out>/audit.jsonl and
/// rewrites <out>/report.json after every round.
class Pipeline {
 public:
  Pipeline(Backend& backend, const Detector& detector, const ContextRegistry& contexts,
           PipelineConfig config, PipelineData data = {},
           std::optional<std::filesystem::path> out_dir = std::nullopt);
  // The detector and contexts are held by reference and must outlive the pipeline.
  Pipeline(Backend&, const Detector&&, const ContextRegistry&, PipelineConfig, PipelineData = {},
           std::optional<std::filesystem::path> = std::nullopt) = delete;

  /// Runs round `round` against the current backend version.
  RoundState run_round(int round);

  /// Rounds 1..R. An aborted round stops the loop; completed rounds are kept.
  PipelineReport run();

  const PipelineConfig& config() const { return config_; }

 private:
  void persist(RoundState& state, const nlohmann::json& audit);

  Backend& backend_;
  const Detector& detector_;
  const ContextRegistry& contexts_;
  PipelineConfig config_;
  PipelineData data_;
  std::optional<std::filesystem::path> out_dir_;
  PipelineReport report_;
};

PipelineReport run_pipeline(Backend& backend, const Detector& detector,
                            const ContextRegistry& contexts, const PipelineConfig& config,
                            const PipelineData& data = {},
                            std::optional<std::filesystem::path> out_dir = std::nullopt);

/// Distinct-n over every utterance of a dataset.
double dataset_distinct(const Dataset& dataset, int n);

}  // namespace emcee
