#include "support/oracles.hpp"

#include <algorithm>
#include <boost/multiprecision/cpp_bin_float.hpp>
#include <cmath>

namespace emcee::testing {

using Big = boost::multiprecision::cpp_bin_float_50;

std::vector<double> penalized_oracle(const std::vector<double>& z, double temperature,
                                     double theta, const std::vector<bool>& in_g) {
  std::vector<Big> e(z.size());
  Big total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const Big divisor = Big(temperature) + (in_g[i] ? Big(theta) : Big(0));
    e[i] = boost::multiprecision::exp(Big(z[i]) / divisor);
    total += e[i];
  }
  std::vector<double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = static_cast<double>(e[i] / total);
  return p;
}

std::size_t count_occurrences(const Tokens& tokens, const Tokens& gram) {
  std::size_t count = 0;
  if (gram.empty() || tokens.size() < gram.size()) return 0;
  for (std::size_t start = 0; start + gram.size() <= tokens.size(); ++start) {
    bool same = true;
    for (std::size_t k = 0; k < gram.size(); ++k) same = same && tokens[start + k] == gram[k];
    if (same) ++count;
  }
  return count;
}

std::size_t ngram_total(const Tokens& tokens, std::size_t n) {
  return tokens.size() >= n ? tokens.size() - n + 1 : 0;
}

std::size_t brute_clipped(const Tokens& candidate, const Tokens& reference, std::size_t n) {
  std::size_t overlap = 0;
  for (std::size_t start = 0; start + n <= candidate.size(); ++start) {
    const Tokens gram(candidate.begin() + start, candidate.begin() + start + n);
    // Count each distinct gram once, at its first position.
    bool seen = false;
    for (std::size_t prev = 0; prev < start && !seen; ++prev) {
      seen = std::equal(gram.begin(), gram.end(), candidate.begin() + prev);
    }
    if (seen) continue;
    overlap += std::min(count_occurrences(candidate, gram), count_occurrences(reference, gram));
  }
  return overlap;
}

double brute_bleu(const Tokens& candidate, const Tokens& reference, int n) {
  if (candidate.empty()) return 0.0;
  double log_sum = 0.0;
  int used = 0;
  for (int k = 1; k <= n; ++k) {
    const auto total = ngram_total(candidate, static_cast<std::size_t>(k));
    if (total == 0) break;
    const auto matches = brute_clipped(candidate, reference, static_cast<std::size_t>(k));
    if (matches == 0) return 0.0;
    log_sum += std::log(static_cast<double>(matches) / static_cast<double>(total));
    ++used;
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  return std::min(1.0, std::exp(1.0 - r / c)) * std::exp(log_sum / used);
}

namespace {

double f1(std::size_t overlap, std::size_t cand, std::size_t ref) {
  if (overlap == 0 || cand == 0 || ref == 0) return 0.0;
  const double p = static_cast<double>(overlap) / static_cast<double>(cand);
  const double r = static_cast<double>(overlap) / static_cast<double>(ref);
  return 2 * p * r / (p + r);
}

}  // namespace

double brute_rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
  const auto k = static_cast<std::size_t>(n);
  return f1(brute_clipped(candidate, reference, k), ngram_total(candidate, k),
            ngram_total(reference, k));
}

std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::vector<std::vector<std::size_t>> table(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;) {
    for (std::size_t j = b.size(); j-- > 0;) {
      table[i][j] = a[i] == b[j] ? table[i + 1][j + 1] + 1 : std::max(table[i + 1][j], table[i][j + 1]);
    }
  }
  return table[0][0];
}

double brute_rouge_l(const Tokens& candidate, const Tokens& reference) {
  return f1(brute_lcs(candidate, reference), candidate.size(), reference.size());
}

double brute_distinct(const std::vector<Tokens>& corpus, int n) {
  const auto k = static_cast<std::size_t>(n);
  std::vector<Tokens> unique;
  std::size_t total = 0;
  for (const auto& tokens : corpus) {
    for (std::size_t start = 0; start + k <= tokens.size(); ++start) {
      Tokens gram(tokens.begin() + start, tokens.begin() + start + k);
      ++total;
      if (std::find(unique.begin(), unique.end(), gram) == unique.end()) unique.push_back(gram);
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

}  // namespace emcee::testing
