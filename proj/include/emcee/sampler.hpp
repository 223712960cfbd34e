#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "emcee/backend.hpp"
#include "emcee/rng.hpp"

namespace emcee {

struct PenaltyConfig {
  double temperature = 1.2;  // T > 0
  double penalty = 1.1;      // theta >= 0

  void validate() const;
};

/// Token ids already emitted during the current round (G). Only generated
/// tokens are inserted; prompt and demonstration tokens never are.
class PenaltySet {
 public:
  explicit PenaltySet(std::size_t vocab_size = 0, int round = 0);

  bool contains(TokenId id) const {
    return id >= 0 && static_cast<std::size_t>(id) < member_.size() &&
           member_[static_cast<std::size_t>(id)] != 0;
  }
  std::size_t size() const { return count_; }
  bool empty() const { return count_ == 0; }
  std::size_t vocab_size() const { return member_.size(); }
  int round() const { return round_; }

  /// Throws ValidationError for an id outside the vocabulary.
  void insert(TokenId id);
  void insert(std::span<const TokenId> ids);
  /// Adds every member of `other` (same vocabulary size).
  void merge(const PenaltySet& other);
  /// Empties the set at a round boundary.
  void reset(int round);

  std::vector<TokenId> members() const;

  friend bool operator==(const PenaltySet&, const PenaltySet&) = default;

 private:
  std::vector<unsigned char> member_;
  std::size_t count_ = 0;
  int round_ = 0;
};

/// p_i = exp(z_i / (T + theta * [i in G])) / sum_j exp(z_j / (T + theta * [j in G])).
/// The per-token scaled logits are shifted by their maximum before exponentiation.
/// Throws NumericError on a non-finite logit, ValidationError on a size mismatch.
std::vector<double> penalized_distribution(std::span<const double> logits,
                                           const PenaltyConfig& config, const PenaltySet& penalized);

/// Returns G ∪ ids.
PenaltySet update_penalty_set(PenaltySet penalized, std::span<const TokenId> ids);

/// Categorical draw from `probs`. With top_k > 0 only the k most probable
/// entries (ties broken by lower id) are kept and renormalized.
TokenId sample_token(std::span<const double> probs, Rng& rng, std::size_t top_k = 0);

struct StopSpec {
  std::vector<TokenId> stop_tokens;
  std::size_t max_len = 64;
  std::size_t top_k = 0;
};

struct TurnOutput {
  std::vector<TokenId> tokens;         // emitted tokens, stop token excluded
  std::optional<TokenId> stopped_by;   // empty when max_len was reached
};

/// Autoregressive generation of one turn. After every emitted token the token
/// is added to `penalized`; stop tokens end the turn and are not added.
TurnOutput generate_turn(const Backend& backend, std::span<const TokenId> prompt,
                         const PenaltyConfig& config, PenaltySet& penalized, const StopSpec& stop,
                         Rng& rng);

}  // namespace emcee
