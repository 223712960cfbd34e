#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "emcee/backend.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/detector.hpp"
#include "emcee/sampler.hpp"
#include "json.hpp"

namespace emcee {

enum class DemoPolicy { none, one, zero_or_one };
enum class PenaltyScope { round, conversation };
enum class GenerationMode { sequential, parallel };

std::string default_generation_instruction();
std::string default_answer_instruction();

struct EvalSettings {
  PenaltyConfig sampler{1.0, 0.0};
  std::size_t top_k = 1;  // greedy
  std::size_t max_reply_tokens = 64;
  int validation_shots = 0;
};

/// Everything that shapes one run of the generate -> filter -> finetune loop.
/// Defaults are the full-scale settings: 2000 conversations per round (500 per
/// XAI method), 5 rounds, T = 1.2, theta = 1.1, 3 epochs per round.
struct PipelineConfig {
  std::size_t conversations_per_round = 2000;
  int rounds = 5;
  std::map<XaiMethod, std::size_t> quota = {{XaiMethod::lime, 500},
                                            {XaiMethod::grad_cam, 500},
                                            {XaiMethod::integrated_gradients, 500},
                                            {XaiMethod::shap, 500}};
  PenaltyConfig sampler{1.2, 1.1};
  std::size_t top_k = 0;
  PenaltyScope penalty_scope = PenaltyScope::round;

  DemoPolicy demo_policy = DemoPolicy::zero_or_one;
  // Consecutive conversations sharing one demonstration decision.
  std::size_t demo_batch_size = 1;

  int epochs_per_round = 3;
  nlohmann::json finetune_params = {
      {"lora_rank", 128}, {"learning_rate", 2e-4}, {"batch_size", 32}, {"lr_schedule", "cosine"}};

  bool filtering = true;
  FilterPolicy filter_policy;
  std::size_t filter_workers = 1;

  GenerationMode generation_mode = GenerationMode::sequential;
  std::size_t generation_workers = 4;
  std::size_t max_pairs = 14;
  std::size_t max_turn_tokens = 48;

  std::uint64_t seed = 0;
  std::string generation_instruction = default_generation_instruction();
  std::string answer_instruction = default_answer_instruction();
  EvalSettings eval;

  /// Throws ConfigError on inconsistent settings (quota sum != N, R < 1, ...).
  void validate() const;
};


/// Splits `n` evenly over the four methods, remainder to the earlier ones.
std::map<XaiMethod, std::size_t> even_quota(std::size_t n);

/// Desk-scale settings for the toy backend: 20 conversations per round, 3 rounds.
PipelineConfig desk_config();

enum class Ablation { none, no_multiround, no_penalty, no_filter };
Ablation ablation_from_string(std::string_view name);
/// Single-round, theta = 0, or identity filtering.
PipelineConfig apply_ablation(PipelineConfig config, Ablation ablation);

nlohmann::json pipeline_config_to_json(const PipelineConfig& config);
/// Fields absent from `j` keep their value from `base`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = {});

struct BackendSpec {
  std::string kind = "toy";  // toy | remote | echo
  std::filesystem::path seed_corpus;
  std::filesystem::path checkpoint;  // toy: resume from this file
  int order = 3;
  double alpha = 1e-4;
  std::string url;  // remote
};

struct DetectorSpec {
  std::string kind = "rule";  // rule | remote | none
  std::filesystem::path table;
  std::string url;
};

struct SplitSettings {
  std::size_t gen_demos = 0, eval_demos = 0, n_val = 0, n_test = 0;
  std::uint64_t seed = 0;
  bool all_test = false;  // whole corpus is the test split
};

/// Resources a CLI run needs, next to the pipeline settings. Relative paths
/// are resolved against the directory of the config file.
struct RunConfig {
  PipelineConfig pipeline;
  BackendSpec backend;
  DetectorSpec detector;
  std::filesystem::path contexts;
  std::filesystem::path human_corpus;
  SplitSettings split;
};

RunConfig load_run_config(const std::filesystem::path& path);
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);

/// "toy", "echo" or "remote:URL".
BackendSpec parse_backend_flag(const std::string& flag, BackendSpec base);
/// "rule:PATH", "remote:URL" or "none".
DetectorSpec parse_detector_flag(const std::string& flag, DetectorSpec base);

/// Texts a toy vocabulary should cover besides its seed corpus: both
/// instructions, the role cues and section headers, every rendered context
/// block and, when given, the human conversations.
std::vector<std::string> prompt_vocab_texts(const PipelineConfig& config, const ContextRegistry& contexts,
                                            const Dataset* human = nullptr);

/// Builds the backend. The toy vocabulary also covers `extra_vocab_texts`.
std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const PipelineConfig& config,
                                      std::span<const std::string> extra_vocab_texts = {});
std::unique_ptr<Detector> make_detector(const DetectorSpec& spec, const FilterPolicy& policy);

/// Non-blank lines of a text file, '#' comments skipped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace emcee
