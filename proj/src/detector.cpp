#include "emcee/detector.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <future>
#include <mutex>
#include <set>
#include <sstream>

#include "emcee/error.hpp"

namespace emcee {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

Label parse_label(const std::string& raw, const std::string& source, std::size_t line) {
  const auto v = trim(raw);
  if (v == "0") return Label::correct;
  if (v == "1") return Label::incorrect;
  throw ParseError(source, line, "label must be 0 or 1, got '" + v + "'");
}

struct CsvRecord {
  std::vector<std::string> fields;
  std::size_t line;
};

std::vector<CsvRecord> parse_csv(std::string_view text, const std::string& source) {
  std::vector<CsvRecord> records;
  CsvRecord rec{{}, 1};
  std::string field;
  bool quoted = false;
  bool field_started = false;
  std::size_t line = 1;
  auto end_record = [&] {
    rec.fields.push_back(std::move(field));
    field.clear();
    const bool blank = rec.fields.size() == 1 && trim(rec.fields[0]).empty();
    if (!blank) records.push_back(std::move(rec));
    rec = CsvRecord{{}, line};
    field_started = false;
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        if (ch == '\n') ++line;
        field += ch;
      }
      continue;
    }
    if (ch == '"' && !field_started) {
      quoted = true;
      field_started = true;
    } else if (ch == ',') {
      rec.fields.push_back(std::move(field));
      field.clear();
      field_started = false;
    } else if (ch == '\n') {
      ++line;
      end_record();
    } else if (ch == '\r') {
      // part of CRLF
    } else {
      field += ch;
      field_started = true;
    }
  }
  if (quoted) throw ParseError(source, rec.line, "unterminated quoted field");
  if (!field.empty() || !rec.fields.empty()) end_record();
  return records;
}

}  // namespace

LabeledSet parse_labeled_sentences(std::string_view text, bool jsonl, bool dedupe,
                                   const std::string& source) {
  LabeledSet out;
  std::set<std::string> seen;
  auto add = [&](std::string sentence, Label label, std::size_t line) {
    if (trim(sentence).empty()) throw ParseError(source, line, "empty sentence");
    if (dedupe && !seen.insert(sentence).second) {
      ++out.stats.duplicates_removed;
      return;
    }
    (label == Label::correct ? out.stats.correct : out.stats.incorrect) += 1;
    out.sentences.push_back({std::move(sentence), label});
  };

  if (jsonl) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < text.size()) {
      std::size_t end = text.find('\n', pos);
      if (end == std::string_view::npos) end = text.size();
      const auto line = text.substr(pos, end - pos);
      pos = end + 1;
      ++line_no;
      if (trim(line).empty()) continue;
      json j;
      try {
        j = json::parse(line);
      } catch (const json::exception& e) {
        throw ParseError(source, line_no, e.what());
      }
      if (!j.contains("sentence") || !j.contains("label")) {
        throw ParseError(source, line_no, "expected {\"sentence\", \"label\"}");
      }
      const auto& l = j.at("label");
      const std::string raw = l.is_string() ? l.get<std::string>() : l.dump();
      add(j.at("sentence").get<std::string>(), parse_label(raw, source, line_no), line_no);
    }
    return out;
  }

  const auto records = parse_csv(text, source);
  if (records.empty()) return out;
  const auto& header = records.front();
  if (header.fields.size() != 2 || trim(header.fields[0]) != "sentence" ||
      trim(header.fields[1]) != "label") {
    throw ParseError(source, header.line, "expected header 'sentence,label'");
  }
  for (std::size_t i = 1; i < records.size(); ++i) {
    const auto& r = records[i];
    if (r.fields.size() != 2) {
      throw ParseError(source, r.line, "expected 2 fields, got " + std::to_string(r.fields.size()));
    }
    add(r.fields[0], parse_label(r.fields[1], source, r.line), r.line);
  }
  return out;
}

LabeledSet load_labeled_sentences(const std::filesystem::path& path, bool dedupe) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();
  bool jsonl = path.extension() == ".jsonl";
  if (!jsonl) {
    const auto first = text.find_first_not_of(" \t\r\n");
    jsonl = first != std::string::npos && text[first] == '{';
  }
  return parse_labeled_sentences(text, jsonl, dedupe, path.string());
}

void FilterPolicy::validate() const {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw ConfigError("filter threshold must be in [0, 1]");
  }
}

std::string_view to_string(Granularity g) {
  return g == Granularity::whole_turn ? "whole_turn" : "per_sentence";
}

Granularity granularity_from_string(std::string_view name) {
  if (name == "whole_turn") return Granularity::whole_turn;
  if (name == "per_sentence") return Granularity::per_sentence;
  throw ConfigError("unknown filter granularity '" + std::string(name) + "'");
}

std::string_view to_string(UnknownBehavior b) { return b == UnknownBehavior::keep ? "keep" : "flag"; }

UnknownBehavior unknown_behavior_from_string(std::string_view name) {
  if (name == "keep") return UnknownBehavior::keep;
  if (name == "flag") return UnknownBehavior::flag;
  throw ConfigError("unknown unknown_behavior '" + std::string(name) + "'");
}

std::string normalize_sentence(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char raw : text) {
    const auto ch = static_cast<unsigned char>(raw);
    if (std::isspace(ch)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += (ch >= 'A' && ch <= 'Z') ? static_cast<char>(ch - 'A' + 'a') : raw;
  }
  return out;
}

std::vector<std::string> split_sentences(std::string_view text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (ch != '.' && ch != '!' && ch != '?') continue;
    const bool boundary =
        i + 1 == text.size() || std::isspace(static_cast<unsigned char>(text[i + 1]));
    if (!boundary) continue;
    auto piece = trim(text.substr(start, i + 1 - start));
    if (!piece.empty()) out.push_back(std::move(piece));
    start = i + 1;
  }
  auto tail = trim(text.substr(std::min(start, text.size())));
  if (!tail.empty()) out.push_back(std::move(tail));
  return out;
}

RuleDetector::RuleDetector(std::span<const LabeledSentence> table, UnknownBehavior unknown)
    : unknown_(unknown) {
  for (const auto& s : table) {
    // A sentence listed with both labels resolves to incorrect.
    auto [it, inserted] = table_.emplace(normalize_sentence(s.sentence), s.label);
    if (!inserted && s.label == Label::incorrect) it->second = Label::incorrect;
  }
}

DetectorVerdict RuleDetector::classify(std::string_view text) const {
  auto it = table_.find(normalize_sentence(text));
  if (it == table_.end()) return {unknown_ == UnknownBehavior::flag, 0.0};
  return {it->second == Label::incorrect, 1.0};
}

bool turn_flagged(const Detector& detector, const FilterPolicy& policy, std::string_view text,
                  std::vector<std::string>* flagged_parts) {
  if (policy.granularity == Granularity::whole_turn) {
    const bool flagged = detector.classify(text).flagged;
    if (flagged && flagged_parts) flagged_parts->emplace_back(text);
    return flagged;
  }
  bool any = false;
  for (const auto& sentence : split_sentences(text)) {
    if (detector.classify(sentence).flagged) {
      any = true;
      if (!flagged_parts) break;
      flagged_parts->push_back(sentence);
    }
  }
  return any;
}

void to_json(json& j, const FilterReport& report) {
  json rows = json::array();
  for (const auto& r : report.conversations) {
    rows.push_back({{"id", r.id},
                    {"pairs_in", r.pairs_in},
                    {"pairs_removed", r.pairs_removed},
                    {"dropped", r.dropped},
                    {"flagged_texts", r.flagged_texts}});
  }
  j = {{"pairs_in", report.pairs_in},
       {"pairs_removed", report.pairs_removed},
       {"conversations_dropped", report.conversations_dropped},
       {"conversations", std::move(rows)}};
}

FilterResult filter_dataset(const Dataset& dataset, const Detector& detector,
                            const FilterPolicy& policy, std::size_t workers) {
  policy.validate();

  // Machine turns in dataset order.
  struct Job {
    std::size_t conversation;
    std::size_t turn;
  };
  std::vector<Job> jobs;
  for (std::size_t c = 0; c < dataset.conversations.size(); ++c) {
    const auto& turns = dataset.conversations[c].turns;
    for (std::size_t t = 1; t < turns.size(); t += 2) jobs.push_back({c, t});
  }

  struct Outcome {
    bool flagged = false;
    std::vector<std::string> parts;
  };
  std::vector<Outcome> outcomes(jobs.size());
  auto run = [&](std::size_t k) {
    const auto& text = dataset.conversations[jobs[k].conversation].turns[jobs[k].turn].text;
    outcomes[k].flagged = turn_flagged(detector, policy, text, &outcomes[k].parts);
  };
  if (workers <= 1) {
    for (std::size_t k = 0; k < jobs.size(); ++k) run(k);
  } else {
    std::vector<std::future<void>> pending;
    std::size_t next = 0;
    std::mutex next_mutex;
    for (std::size_t w = 0; w < workers; ++w) {
      pending.push_back(std::async(std::launch::async, [&] {
        while (true) {
          std::size_t k;
          {
            std::lock_guard lock(next_mutex);
            if (next >= jobs.size()) return;
            k = next++;
          }
          run(k);
        }
      }));
    }
    for (auto& f : pending) f.get();
  }

  FilterResult result;
  result.clean.provenance = dataset.provenance;
  result.clean.round = dataset.round;
  std::size_t k = 0;
  for (const auto& conversation : dataset.conversations) {
    ConversationFilterRecord record;
    record.id = conversation.id;
    record.pairs_in = conversation.pair_count();
    Conversation kept = conversation;
    kept.turns.clear();
    const auto& turns = conversation.turns;
    for (std::size_t t = 0; t + 1 < turns.size(); t += 2, ++k) {
      if (outcomes[k].flagged) {
        ++record.pairs_removed;
        for (auto& p : outcomes[k].parts) record.flagged_texts.push_back(std::move(p));
        continue;
      }
      kept.turns.push_back(turns[t]);
      kept.turns.push_back(turns[t + 1]);
    }
    if (turns.size() % 2 == 1) kept.turns.push_back(turns.back());

    record.dropped = kept.pair_count() == 0;
    result.report.pairs_in += record.pairs_in;
    result.report.pairs_removed += record.pairs_removed;
    if (record.dropped) {
      ++result.report.conversations_dropped;
    } else {
      result.clean.conversations.push_back(std::move(kept));
    }
    result.report.conversations.push_back(std::move(record));
  }
  return result;
}

double evaluate_detector(const Detector& detector, std::span<const LabeledSentence> labeled) {
  if (labeled.empty()) throw ValidationError("evaluate_detector: empty labeled set");
  std::size_t correct = 0;
  for (const auto& s : labeled) {
    if (detector.classify(s.sentence).flagged == (s.label == Label::incorrect)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(labeled.size());
}

}  // namespace emcee
