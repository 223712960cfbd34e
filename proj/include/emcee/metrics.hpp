#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace emcee {

// Evaluation tokenizer:
//   1. ASCII letters are lowercased; bytes >= 0x80 pass through unchanged.
//   2. ASCII whitespace (space, \t, \n, \v, \f, \r) separates tokens.
//   3. Every ASCII punctuation character (!"#$%&'()*+,-./:;<=>?@[\]^_`{|}~)
//      is a token of its own.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens into readable text. tokenize(join_tokens(t)) == t for any
/// tokenizer output t.
std::string join_tokens(std::span<const std::string> tokens);

using Ngram = std::vector<std::string>;

/// Multiset of the n-grams of one token sequence.
class NgramProfile {
 public:
  NgramProfile(std::span<const std::string> tokens, int n);

  int n() const { return n_; }
  std::size_t total() const { return total_; }
  std::size_t count(const Ngram& gram) const;
  const std::map<Ngram, std::size_t>& counts() const { return counts_; }

  /// Sum over n-grams of min(count here, count in `reference`).
  std::size_t clipped_overlap(const NgramProfile& reference) const;

 private:
  int n_;
  std::size_t total_ = 0;
  std::map<Ngram, std::size_t> counts_;
};

struct BleuOptions {
  // Replace a zero k-gram precision by epsilon / max(1, #candidate k-grams).
  bool smooth = false;
  double epsilon = 0.1;
};

/// BLEU-n: geometric mean of clipped 1..n-gram precisions times
/// BP = min(1, exp(1 - r/c)). A candidate shorter than n tokens averages over
/// orders 1..c only. Returns 0 for an empty candidate.
double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference,
              int n, const BleuOptions& options = {});
double bleu_n(std::string_view candidate, std::string_view reference, int n,
              const BleuOptions& options = {});

/// ROUGE-n F1 over clipped n-gram overlap; 0 when either side has no n-grams.
double rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
               int n);
double rouge_n(std::string_view candidate, std::string_view reference, int n);

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b);

/// ROUGE-L F1 (beta = 1) from the longest common subsequence.
double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference);
double rouge_l(std::string_view candidate, std::string_view reference);

/// Unique n-grams over total n-grams across all texts; 0 without n-grams.
double distinct_n(std::span<const std::string> corpus, int n);

struct ScoreReport {
  std::array<double, 4> bleu{};  // BLEU-1..4
  double rouge1 = 0;
  double rouge2 = 0;
  double rouge3 = 0;
  double rougeL = 0;
  std::size_t n_items = 0;
  std::size_t empty_candidates = 0;

  /// Metric columns in table order: BLEU-1..4, ROUGE-1, ROUGE-2, ROUGE-3, ROUGE-L.
  std::array<double, 8> columns() const;
};

inline constexpr std::array<const char*, 8> kScoreColumns = {
    "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "ROUGE-1", "ROUGE-2", "ROUGE-3", "ROUGE-L"};

void to_json(nlohmann::json& j, const ScoreReport& report);
void from_json(const nlohmann::json& j, ScoreReport& report);

/// Per-pair scores (generated, reference), macro-averaged.
ScoreReport score_responses(std::span<const std::pair<std::string, std::string>> pairs,
                            const BleuOptions& options = {});

/// Aligned text table: a label column followed by the eight metric columns
/// with four decimals.
std::string format_score_table(const std::string& label_header,
                               std::span<const std::pair<std::string, ScoreReport>> rows);

}  // namespace emcee
