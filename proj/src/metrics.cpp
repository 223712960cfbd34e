#include "emcee/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "emcee/error.hpp"

namespace emcee {

namespace {

bool is_ascii_space(unsigned char ch) {
  return ch == ' ' || ch == '\t' || ch == '\n' || ch == '\v' || ch == '\f' || ch == '\r';
}

bool is_ascii_punct(unsigned char ch) {
  return (ch >= 33 && ch <= 47) || (ch >= 58 && ch <= 64) || (ch >= 91 && ch <= 96) ||
         (ch >= 123 && ch <= 126);
}

bool is_punct_token(const std::string& tok) {
  return tok.size() == 1 && is_ascii_punct(static_cast<unsigned char>(tok[0]));
}

bool glue_left(const std::string& tok) {
  static const std::string kClosers = ".,!?;:)]}%'-/";
  return is_punct_token(tok) && kClosers.find(tok[0]) != std::string::npos;
}

bool glue_right(const std::string& tok) {
  static const std::string kOpeners = "([{$'-/";
  return is_punct_token(tok) && kOpeners.find(tok[0]) != std::string::npos;
}

void check_order(int n, int max_n, const char* what) {
  if (n < 1 || n > max_n) {
    throw ValidationError(std::string(what) + ": n must be in 1.." + std::to_string(max_n));
  }
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap == 0 || cand_total == 0 || ref_total == 0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2 * p * r / (p + r);
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) tokens.push_back(std::move(current));
    current.clear();
  };
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (is_ascii_space(ch)) {
      flush();
    } else if (is_ascii_punct(ch)) {
      flush();
      tokens.emplace_back(1, raw);
    } else if (ch >= 'A' && ch <= 'Z') {
      current += static_cast<char>(ch - 'A' + 'a');
    } else {
      current += raw;
    }
  }
  flush();
  return tokens;
}

std::string join_tokens(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && !glue_left(tokens[i]) && !glue_right(tokens[i - 1])) out += ' ';
    out += tokens[i];
  }
  return out;
}

NgramProfile::NgramProfile(std::span<const std::string> tokens, int n) : n_(n) {
  if (n < 1) throw ValidationError("n-gram order must be >= 1");
  const auto order = static_cast<std::size_t>(n);
  if (tokens.size() < order) return;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    ++counts_[Ngram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                    tokens.begin() + static_cast<std::ptrdiff_t>(i + order))];
    ++total_;
  }
}

std::size_t NgramProfile::count(const Ngram& gram) const {
  auto it = counts_.find(gram);
  return it == counts_.end() ? 0 : it->second;
}

std::size_t NgramProfile::clipped_overlap(const NgramProfile& reference) const {
  std::size_t overlap = 0;
  for (const auto& [gram, c] : counts_) overlap += std::min(c, reference.count(gram));
  return overlap;
}

double bleu_n(std::span<const std::string> candidate, std::span<const std::string> reference,
              int n, const BleuOptions& options) {
  check_order(n, 4, "bleu_n");
  if (candidate.empty()) return 0.0;
  // Orders longer than the candidate have no k-grams and are left out of the mean.
  const int orders = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), candidate.size()));
  double log_sum = 0.0;
  for (int k = 1; k <= orders; ++k) {
    const NgramProfile cand(candidate, k);
    const NgramProfile ref(reference, k);
    const auto matches = cand.clipped_overlap(ref);
    double precision = static_cast<double>(matches) / static_cast<double>(cand.total());
    if (precision == 0.0) {
      if (!options.smooth) return 0.0;
      precision = options.epsilon / static_cast<double>(cand.total());
    }
    log_sum += std::log(precision);
  }
  const double c = static_cast<double>(candidate.size());
  const double r = static_cast<double>(reference.size());
  const double bp = std::min(1.0, std::exp(1.0 - r / c));
  return bp * std::exp(log_sum / orders);
}

double bleu_n(std::string_view candidate, std::string_view reference, int n,
              const BleuOptions& options) {
  return bleu_n(tokenize(candidate), tokenize(reference), n, options);
}

double rouge_n(std::span<const std::string> candidate, std::span<const std::string> reference,
               int n) {
  check_order(n, 3, "rouge_n");
  const NgramProfile cand(candidate, n);
  const NgramProfile ref(reference, n);
  return f1(static_cast<double>(cand.clipped_overlap(ref)), static_cast<double>(cand.total()),
            static_cast<double>(ref.total()));
}

double rouge_n(std::string_view candidate, std::string_view reference, int n) {
  return rouge_n(tokenize(candidate), tokenize(reference), n);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const std::string> candidate, std::span<const std::string> reference) {
  return f1(static_cast<double>(lcs_length(candidate, reference)),
            static_cast<double>(candidate.size()), static_cast<double>(reference.size()));
}

double rouge_l(std::string_view candidate, std::string_view reference) {
  return rouge_l(tokenize(candidate), tokenize(reference));
}

double distinct_n(std::span<const std::string> corpus, int n) {
  if (n < 1) throw ValidationError("distinct_n: n must be >= 1");
  std::set<Ngram> unique;
  std::size_t total = 0;
  for (const auto& text : corpus) {
    const NgramProfile profile(tokenize(text), n);
    total += profile.total();
    for (const auto& [gram, c] : profile.counts()) unique.insert(gram);
  }
  return total == 0 ? 0.0 : static_cast<double>(unique.size()) / static_cast<double>(total);
}

std::array<double, 8> ScoreReport::columns() const {
  return {bleu[0], bleu[1], bleu[2], bleu[3], rouge1, rouge2, rouge3, rougeL};
}

void to_json(nlohmann::json& j, const ScoreReport& r) {
  j = {{"bleu1", r.bleu[0]},   {"bleu2", r.bleu[1]},   {"bleu3", r.bleu[2]},
       {"bleu4", r.bleu[3]},   {"rouge1", r.rouge1},   {"rouge2", r.rouge2},
       {"rouge3", r.rouge3},   {"rougeL", r.rougeL},   {"n_items", r.n_items},
       {"empty_candidates", r.empty_candidates}};
}

void from_json(const nlohmann::json& j, ScoreReport& r) {
  r.bleu = {j.at("bleu1").get<double>(), j.at("bleu2").get<double>(),
            j.at("bleu3").get<double>(), j.at("bleu4").get<double>()};
  r.rouge1 = j.at("rouge1").get<double>();
  r.rouge2 = j.at("rouge2").get<double>();
  r.rouge3 = j.at("rouge3").get<double>();
  r.rougeL = j.at("rougeL").get<double>();
  r.n_items = j.at("n_items").get<std::size_t>();
  r.empty_candidates = j.value("empty_candidates", std::size_t{0});
}

ScoreReport score_responses(std::span<const std::pair<std::string, std::string>> pairs,
                            const BleuOptions& options) {
  if (pairs.empty()) throw ValidationError("score_responses: no pairs to score");
  ScoreReport report;
  for (const auto& [generated, reference] : pairs) {
    const auto cand = tokenize(generated);
    const auto ref = tokenize(reference);
    if (cand.empty()) ++report.empty_candidates;
    for (int n = 1; n <= 4; ++n) report.bleu[static_cast<std::size_t>(n - 1)] += bleu_n(cand, ref, n, options);
    report.rouge1 += rouge_n(cand, ref, 1);
    report.rouge2 += rouge_n(cand, ref, 2);
    report.rouge3 += rouge_n(cand, ref, 3);
    report.rougeL += rouge_l(cand, ref);
  }
  const auto count = static_cast<double>(pairs.size());
  for (double& b : report.bleu) b /= count;
  report.rouge1 /= count;
  report.rouge2 /= count;
  report.rouge3 /= count;
  report.rougeL /= count;
  report.n_items = pairs.size();
  return report;
}

std::string format_score_table(const std::string& label_header,
                               std::span<const std::pair<std::string, ScoreReport>> rows) {
  std::size_t label_width = label_header.size();
  for (const auto& [label, r] : rows) label_width = std::max(label_width, label.size());

  std::string out;
  char cell[64];
  std::snprintf(cell, sizeof cell, "%-*s", static_cast<int>(label_width), label_header.c_str());
  out += cell;
  for (const char* name : kScoreColumns) {
    std::snprintf(cell, sizeof cell, "  %7s", name);
    out += cell;
  }
  out += '\n';
  for (const auto& [label, r] : rows) {
    std::snprintf(cell, sizeof cell, "%-*s", static_cast<int>(label_width), label.c_str());
    out += cell;
    for (double v : r.columns()) {
      std::snprintf(cell, sizeof cell, "  %7.4f", v);
      out += cell;
    }
    out += '\n';
  }
  return out;
}

}  // namespace emcee
