#include "emcee/echo_backend.hpp"

#include <algorithm>
#include <fstream>

#include "emcee/error.hpp"
#include "emcee/metrics.hpp"
#include "json.hpp"

namespace emcee {

EchoBackend::EchoBackend(Vocabulary vocab, ReplyFn reply)
    : vocab_(std::move(vocab)), reply_(std::move(reply)) {
  if (!reply_) throw ConfigError("echo backend needs a reply function");
}

EchoBackend::ReplyFn EchoBackend::repeat_last_user() {
  return [](const std::string& prompt) {
    // Prompts arrive as decoded token text, so the "User:" cue reads "user:".
    const auto tokens = tokenize(prompt);
    std::size_t start = tokens.size();
    for (std::size_t i = 0; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == "user" && tokens[i + 1] == ":") start = i + 2;
    }
    std::size_t end = tokens.size();
    for (std::size_t i = start; i + 1 < tokens.size(); ++i) {
      if (tokens[i] == "assistant" && tokens[i + 1] == ":") {
        end = i;
        break;
      }
    }
    if (start >= end) return std::string();
    return join_tokens(std::span<const std::string>(tokens).subspan(start, end - start));
  };
}

LogitVector EchoBackend::logits(std::span<const TokenId> prefix) const {
  const auto boundary = std::find(prefix.rbegin(), prefix.rend(), vocab_.bos());
  const std::size_t prompt_len =
      boundary == prefix.rend() ? 0 : static_cast<std::size_t>(prefix.rend() - boundary) - 1;
  const std::string prompt = vocab_.decode(prefix.subspan(0, prompt_len));
  const std::size_t emitted = prefix.size() - std::min(prefix.size(), prompt_len + 1);

  auto target = vocab_.encode(reply_(prompt));
  target.push_back(vocab_.eos());
  const TokenId next = emitted < target.size() ? target[emitted] : vocab_.eos();

  LogitVector out(vocab_.size(), kMissLogit);
  out[static_cast<std::size_t>(next)] = 0.0;
  return out;
}

std::uint64_t EchoBackend::finetune(const Dataset& dataset, int epochs) {
  if (dataset.empty()) throw ValidationError("refusing to finetune on an empty dataset");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  return ++version_;
}

std::string EchoBackend::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const std::string name = "echo-v" + std::to_string(version_) + ".json";
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  out << nlohmann::json{{"kind", "echo"}, {"version", version_}}.dump() << '\n';
  return name;
}

}  // namespace emcee
