#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>

#include "emcee/backend.hpp"
#include "json.hpp"

namespace emcee {

struct RemoteOptions {
  int max_attempts = 3;
  std::chrono::milliseconds retry_backoff{200};
  std::chrono::milliseconds poll_interval{500};
  std::chrono::seconds timeout{60};
  std::chrono::seconds job_timeout{24 * 3600};
  // Directory where finetune datasets are staged; passed as file:// URIs.
  std::filesystem::path staging_dir = std::filesystem::temp_directory_path() / "emcee-staging";
  // Opaque finetune job parameters (adapter rank, learning rate, ...).
  nlohmann::json finetune_params = nlohmann::json::object();
  std::uint64_t initial_version = 1;
};

/// Client of a generation server speaking the JSON-over-HTTP protocol:
///   GET  /v1/vocab                                      -> {"vocab": [tokens...]}
///   POST /v1/logits   {model_version, prefix_ids}      -> {logits} | {top_k:[{id,logit}], rest_logit}
///   POST /v1/finetune {dataset_uri, epochs, params}    -> {job_id}
///   GET  /v1/jobs/{id}                                  -> {status, new_version}
/// Text is tokenized locally with the evaluation tokenizer against the served vocabulary.
class RemoteBackend final : public Backend {
 public:
  /// `base_url` like "http://host:port". Fetches the vocabulary.
  explicit RemoteBackend(std::string base_url, RemoteOptions options = {});

  BackendKind kind() const override { return BackendKind::remote; }
  const Vocabulary& vocab() const override { return *vocab_; }
  std::uint64_t version() const override { return version_; }
  LogitVector logits(std::span<const TokenId> prefix) const override;
  std::uint64_t finetune(const Dataset& dataset, int epochs) override;
  std::string save_checkpoint(const std::filesystem::path& dir) const override;

  const std::string& base_url() const { return base_url_; }

 private:
  nlohmann::json request(const std::string& method, const std::string& path,
                         const nlohmann::json* body) const;

  std::string base_url_;
  RemoteOptions options_;
  std::optional<Vocabulary> vocab_;
  std::uint64_t version_;
};

}  // namespace emcee
