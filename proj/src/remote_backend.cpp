#include "emcee/remote_backend.hpp"

#include <cmath>
#include <fstream>
#include <thread>

#include "emcee/dataset_io.hpp"
#include "emcee/error.hpp"
#include "httplib.h"

namespace emcee {

using nlohmann::json;

RemoteBackend::RemoteBackend(std::string base_url, RemoteOptions options)
    : base_url_(std::move(base_url)), options_(std::move(options)), version_(options_.initial_version) {
  if (options_.max_attempts < 1) throw ConfigError("remote backend: max_attempts must be >= 1");
  const json reply = request("GET", "/v1/vocab", nullptr);
  const json& list = reply.is_object() ? reply.at("vocab") : reply;
  vocab_.emplace(list.get<std::vector<std::string>>());
}

json RemoteBackend::request(const std::string& method, const std::string& path,
                            const json* body) const {
  std::string last_error;
  for (int attempt = 1; attempt <= options_.max_attempts; ++attempt) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(options_.timeout);
    client.set_read_timeout(options_.timeout);
    httplib::Result res = method == "GET"
                              ? client.Get(path)
                              : client.Post(path, body ? body->dump() : "{}", "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
    } else if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
    } else if (res->status >= 400) {
      throw BackendError(method + " " + path + ": HTTP " + std::to_string(res->status) + ": " +
                             res->body,
                         false, attempt);
    } else {
      try {
        return json::parse(res->body);
      } catch (const json::exception& e) {
        throw BackendError(method + " " + path + ": malformed reply: " + e.what(), false, attempt);
      }
    }
    if (attempt < options_.max_attempts) std::this_thread::sleep_for(options_.retry_backoff * attempt);
  }
  throw BackendError(method + " " + base_url_ + path + " failed after " +
                         std::to_string(options_.max_attempts) + " attempts: " + last_error,
                     true, options_.max_attempts);
}

LogitVector RemoteBackend::logits(std::span<const TokenId> prefix) const {
  const json body = {{"model_version", version_},
                     {"prefix_ids", std::vector<TokenId>(prefix.begin(), prefix.end())}};
  const json reply = request("POST", "/v1/logits", &body);
  LogitVector out;
  if (reply.contains("logits")) {
    out = reply.at("logits").get<LogitVector>();
  } else if (reply.contains("top_k")) {
    // Untracked ids share the floor logit.
    out.assign(vocab_->size(), reply.at("rest_logit").get<double>());
    for (const auto& entry : reply.at("top_k")) {
      const auto id = entry.at("id").get<TokenId>();
      if (!vocab_->contains(id)) throw BackendError("top-k reply names unknown token id");
      out[static_cast<std::size_t>(id)] = entry.at("logit").get<double>();
    }
  } else {
    throw BackendError("logits reply has neither 'logits' nor 'top_k'");
  }
  if (out.size() != vocab_->size()) {
    throw BackendError("logits reply has " + std::to_string(out.size()) + " entries, vocabulary " +
                       std::to_string(vocab_->size()));
  }
  for (double z : out) {
    if (!std::isfinite(z)) throw BackendError("logits reply contains a non-finite value");
  }
  return out;
}

std::uint64_t RemoteBackend::finetune(const Dataset& dataset, int epochs) {
  if (dataset.empty()) throw ValidationError("refusing to finetune on an empty dataset");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  std::filesystem::create_directories(options_.staging_dir);
  const auto staged = std::filesystem::absolute(
      options_.staging_dir / ("finetune-v" + std::to_string(version_) + ".jsonl"));
  save_dataset(dataset, staged);

  const json body = {{"dataset_uri", "file://" + staged.string()},
                     {"epochs", epochs},
                     {"base_version", version_},
                     {"params", options_.finetune_params}};
  const json job = request("POST", "/v1/finetune", &body);
  const std::string job_id = job.at("job_id").is_string() ? job.at("job_id").get<std::string>()
                                                          : job.at("job_id").dump();
  const auto deadline = std::chrono::steady_clock::now() + options_.job_timeout;
  while (true) {
    const json status = request("GET", "/v1/jobs/" + job_id, nullptr);
    const auto state = status.at("status").get<std::string>();
    if (state == "succeeded" || state == "completed" || state == "done") {
      version_ = status.at("new_version").get<std::uint64_t>();
      return version_;
    }
    if (state == "failed" || state == "cancelled") {
      throw BackendError("finetune job " + job_id + " " + state + ": " + status.value("error", ""));
    }
    if (std::chrono::steady_clock::now() > deadline) {
      throw BackendError("finetune job " + job_id + " timed out", true);
    }
    std::this_thread::sleep_for(options_.poll_interval);
  }
}

std::string RemoteBackend::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const std::string name = "remote-v" + std::to_string(version_) + ".json";
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  out << json{{"kind", "remote"}, {"base_url", base_url_}, {"version", version_}}.dump() << '\n';
  return name;
}

}  // namespace emcee
