#include "emcee/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "emcee/error.hpp"

namespace emcee {

void PenaltyConfig::validate() const {
  if (!(temperature > 0) || !std::isfinite(temperature)) {
    throw ConfigError("temperature must be a finite value > 0");
  }
  if (!(penalty >= 0) || !std::isfinite(penalty)) {
    throw ConfigError("repetition penalty must be a finite value >= 0");
  }
}

PenaltySet::PenaltySet(std::size_t vocab_size, int round) : member_(vocab_size, 0), round_(round) {}

void PenaltySet::insert(TokenId id) {
  if (id < 0 || static_cast<std::size_t>(id) >= member_.size()) {
    throw ValidationError("penalty set: token id " + std::to_string(id) + " out of vocabulary");
  }
  auto& slot = member_[static_cast<std::size_t>(id)];
  if (slot == 0) {
    slot = 1;
    ++count_;
  }
}

void PenaltySet::insert(std::span<const TokenId> ids) {
  for (TokenId id : ids) insert(id);
}

void PenaltySet::merge(const PenaltySet& other) {
  if (other.member_.size() != member_.size()) {
    throw ValidationError("penalty set: merging sets over different vocabularies");
  }
  for (std::size_t i = 0; i < member_.size(); ++i) {
    if (other.member_[i] != 0 && member_[i] == 0) {
      member_[i] = 1;
      ++count_;
    }
  }
}

void PenaltySet::reset(int round) {
  std::fill(member_.begin(), member_.end(), 0);
  count_ = 0;
  round_ = round;
}

std::vector<TokenId> PenaltySet::members() const {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < member_.size(); ++i) {
    if (member_[i] != 0) out.push_back(static_cast<TokenId>(i));
  }
  return out;
}

std::vector<double> penalized_distribution(std::span<const double> logits,
                                           const PenaltyConfig& config,
                                           const PenaltySet& penalized) {
  config.validate();
  if (logits.empty()) throw ValidationError("penalized_distribution: empty logit vector");
  if (penalized.vocab_size() != logits.size()) {
    throw ValidationError("penalized_distribution: penalty set covers " +
                          std::to_string(penalized.vocab_size()) + " tokens, logits " +
                          std::to_string(logits.size()));
  }
  std::vector<double> scaled(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    if (!std::isfinite(logits[i])) {
      throw NumericError("non-finite logit at index " + std::to_string(i));
    }
    const double divisor =
        config.temperature + (penalized.contains(static_cast<TokenId>(i)) ? config.penalty : 0.0);
    scaled[i] = logits[i] / divisor;
  }
  const double shift = *std::max_element(scaled.begin(), scaled.end());
  double total = 0.0;
  for (double& s : scaled) {
    s = std::exp(s - shift);
    total += s;
  }
  for (double& s : scaled) s /= total;
  return scaled;
}

PenaltySet update_penalty_set(PenaltySet penalized, std::span<const TokenId> ids) {
  penalized.insert(ids);
  return penalized;
}

TokenId sample_token(std::span<const double> probs, Rng& rng, std::size_t top_k) {
  if (probs.empty()) throw ValidationError("sample_token: empty distribution");
  std::vector<std::size_t> candidates(probs.size());
  std::iota(candidates.begin(), candidates.end(), std::size_t{0});
  if (top_k > 0 && top_k < probs.size()) {
    std::partial_sort(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(top_k),
                      candidates.end(), [&](std::size_t a, std::size_t b) {
                        return probs[a] > probs[b] || (probs[a] == probs[b] && a < b);
                      });
    candidates.resize(top_k);
    std::sort(candidates.begin(), candidates.end());
  }
  double mass = 0.0;
  for (std::size_t i : candidates) mass += probs[i];
  const double target = rng.uniform01() * mass;
  double acc = 0.0;
  std::size_t last_positive = candidates.front();
  for (std::size_t i : candidates) {
    if (probs[i] <= 0) continue;
    last_positive = i;
    acc += probs[i];
    if (target < acc) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(last_positive);
}

TurnOutput generate_turn(const Backend& backend, std::span<const TokenId> prompt,
                         const PenaltyConfig& config, PenaltySet& penalized, const StopSpec& stop,
                         Rng& rng) {
  if (penalized.vocab_size() != backend.vocab().size()) {
    throw ValidationError("generate_turn: penalty set does not match the backend vocabulary");
  }
  const auto suppressed = backend.suppressed_tokens();
  TurnOutput out;
  std::vector<TokenId> prefix(prompt.begin(), prompt.end());
  while (out.tokens.size() < stop.max_len) {
    LogitVector z;
    try {
      z = backend.logits(prefix);
    } catch (const BackendError& e) {
      throw BackendError(std::string(e.what()) + " (prefix length " + std::to_string(prefix.size()) +
                             ")",
                         e.retryable(), e.attempts());
    }
    auto probs = penalized_distribution(z, config, penalized);
    for (TokenId id : suppressed) probs[static_cast<std::size_t>(id)] = 0.0;
    if (std::none_of(probs.begin(), probs.end(), [](double p) { return p > 0.0; })) {
      throw NumericError("generate_turn: all probability mass is on suppressed tokens");
    }
    const TokenId next = sample_token(probs, rng, stop.top_k);
    if (std::find(stop.stop_tokens.begin(), stop.stop_tokens.end(), next) !=
        stop.stop_tokens.end()) {
      out.stopped_by = next;
      break;
    }
    out.tokens.push_back(next);
    prefix.push_back(next);
    penalized.insert(next);
  }
  return out;
}

}  // namespace emcee
