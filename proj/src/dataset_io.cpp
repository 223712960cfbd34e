#include "emcee/dataset_io.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "emcee/error.hpp"
#include "emcee/metrics.hpp"
#include "emcee/rng.hpp"

namespace emcee {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const json& require(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) {
    throw ValidationError(std::string("missing field '") + key + "'");
  }
  return j.at(key);
}

}  // namespace

json conversation_to_json(const Conversation& conversation) {
  json turns = json::array();
  for (const auto& t : conversation.turns) {
    turns.push_back({{"role", to_string(t.role)}, {"text", t.text}});
  }
  json meta = json::object();
  for (const auto& [k, v] : conversation.meta) meta[k] = v;
  return {{"id", conversation.id},
          {"context_ref", conversation.context_ref},
          {"round", conversation.round},
          {"turns", std::move(turns)},
          {"meta", std::move(meta)}};
}

Conversation conversation_from_json(const json& j) {
  Conversation c;
  c.id = require(j, "id").get<std::string>();
  c.context_ref = require(j, "context_ref").get<std::string>();
  c.round = require(j, "round").get<int>();
  for (const auto& t : require(j, "turns")) {
    Turn turn;
    turn.role = role_from_string(require(t, "role").get<std::string>());
    turn.text = require(t, "text").get<std::string>();
    c.turns.push_back(std::move(turn));
  }
  if (j.contains("meta")) {
    for (const auto& [k, v] : j.at("meta").items()) c.meta[k] = v.get<std::string>();
  }
  return c;
}

std::string dataset_to_jsonl(const Dataset& dataset) {
  std::string out;
  for (const auto& c : dataset.conversations) {
    out += conversation_to_json(c).dump();
    out += '\n';
  }
  return out;
}

Dataset dataset_from_jsonl(std::string_view text, const std::string& source) {
  Dataset dataset;
  std::set<std::string> ids;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (is_blank(line)) continue;
    Conversation c;
    try {
      c = conversation_from_json(json::parse(line));
      c.validate();
    } catch (const json::exception& e) {
      throw ParseError(source, line_no, e.what());
    } catch (const ValidationError& e) {
      throw ParseError(source, line_no, e.what());
    }
    if (!ids.insert(c.id).second) {
      throw ParseError(source, line_no, "duplicate conversation id '" + c.id + "'");
    }
    dataset.conversations.push_back(std::move(c));
  }
  bool human = true;
  int round = 0;
  for (const auto& c : dataset.conversations) {
    if (c.round != 0) human = false;
    round = std::max(round, c.round);
  }
  dataset.provenance = human ? Provenance::human : Provenance::synthetic;
  dataset.round = round;
  return dataset;
}

Dataset load_dataset(const std::filesystem::path& path) {
  return dataset_from_jsonl(read_file(path), path.string());
}

void save_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  dataset.validate();
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << dataset_to_jsonl(dataset);
}

json context_to_json(const ExplanationContext& c) {
  return {{"id", c.id},
          {"xai_method", to_string(c.xai_method)},
          {"task_description", c.task_description},
          {"model_description", c.model_description},
          {"input_image", c.input_image},
          {"model_output", c.model_output},
          {"explanation_image", c.explanation_image},
          {"explanation_description", c.explanation_description}};
}

ExplanationContext context_from_json(const json& j) {
  ExplanationContext c;
  try {
    c.id = require(j, "id").get<std::string>();
    c.xai_method = xai_method_from_string(require(j, "xai_method").get<std::string>());
    c.task_description = require(j, "task_description").get<std::string>();
    c.model_description = require(j, "model_description").get<std::string>();
    c.input_image = require(j, "input_image").get<std::string>();
    c.model_output = require(j, "model_output").get<std::string>();
    c.explanation_image = require(j, "explanation_image").get<std::string>();
    c.explanation_description = require(j, "explanation_description").get<std::string>();
  } catch (const json::exception& e) {
    throw ContextError(std::string("malformed context: ") + e.what());
  } catch (const ValidationError& e) {
    throw ContextError(std::string("malformed context: ") + e.what());
  }
  c.validate();
  return c;
}

bool is_uri(std::string_view ref) {
  const auto pos = ref.find("://");
  if (pos == std::string_view::npos || pos == 0) return false;
  return std::all_of(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(pos),
                     [](unsigned char ch) { return std::isalnum(ch) || ch == '+' || ch == '-' || ch == '.'; });
}

void require_asset(const std::string& context_id, const std::string& ref) {
  if (is_blank(ref)) throw ContextError("context '" + context_id + "': empty asset reference");
  if (is_uri(ref)) return;
  std::error_code ec;
  if (!std::filesystem::is_regular_file(ref, ec)) {
    throw ContextError("context '" + context_id + "': asset not found: " + ref);
  }
}

ContextRegistry::ContextRegistry(std::vector<ExplanationContext> contexts)
    : contexts_(std::move(contexts)) {
  for (std::size_t i = 0; i < contexts_.size(); ++i) {
    contexts_[i].validate();
    if (!index_.emplace(contexts_[i].id, i).second) {
      throw ContextError("duplicate context id '" + contexts_[i].id + "'");
    }
  }
}

ContextRegistry ContextRegistry::load(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ContextError(path.string() + ": " + e.what());
  }
  const json& list = doc.is_object() && doc.contains("contexts") ? doc.at("contexts") : doc;
  if (!list.is_array()) throw ContextError(path.string() + ": expected a list of contexts");
  const auto base = path.parent_path();
  std::vector<ExplanationContext> contexts;
  for (const auto& item : list) {
    auto c = context_from_json(item);
    for (std::string* asset : {&c.input_image, &c.explanation_image}) {
      if (is_uri(*asset)) continue;
      std::filesystem::path p(*asset);
      if (p.is_relative()) p = base / p;
      *asset = p.lexically_normal().string();
      require_asset(c.id, *asset);
    }
    contexts.push_back(std::move(c));
  }
  return ContextRegistry(std::move(contexts));
}

const ExplanationContext* ContextRegistry::find(std::string_view id) const {
  auto it = index_.find(std::string(id));
  return it == index_.end() ? nullptr : &contexts_[it->second];
}

const ExplanationContext& ContextRegistry::at(std::string_view id) const {
  if (const auto* c = find(id)) return *c;
  throw NotFoundError("unknown context '" + std::string(id) + "'");
}

std::vector<const ExplanationContext*> ContextRegistry::by_method(XaiMethod method) const {
  std::vector<const ExplanationContext*> out;
  for (const auto& c : contexts_) {
    if (c.xai_method == method) out.push_back(&c);
  }
  return out;
}

DatasetSplit split_dataset(const Dataset& dataset, std::uint64_t seed, const SplitSpec& spec,
                           const ContextRegistry& contexts) {
  const std::size_t requested = spec.gen_demos + spec.eval_demos + spec.n_val + spec.n_test;
  if (requested != dataset.size()) {
    throw ConfigError("split sizes sum to " + std::to_string(requested) + " but the dataset has " +
                      std::to_string(dataset.size()) + " conversations");
  }

  std::vector<std::size_t> order(dataset.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(seed);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.uniform_index(i)]);
  }

  DatasetSplit split;
  std::vector<bool> taken(dataset.size(), false);
  if (spec.gen_demos > 0) {
    std::vector<XaiMethod> present;
    for (XaiMethod m : kAllXaiMethods) {
      for (const auto& c : dataset.conversations) {
        if (contexts.at(c.context_ref).xai_method == m) {
          present.push_back(m);
          break;
        }
      }
    }
    if (spec.gen_demos != present.size()) {
      throw ConfigError("gen_demos must equal the number of XAI methods present (" +
                        std::to_string(present.size()) + ")");
    }
    // First conversation of each method in shuffled order.
    for (XaiMethod m : present) {
      for (std::size_t idx : order) {
        if (!taken[idx] &&
            contexts.at(dataset.conversations[idx].context_ref).xai_method == m) {
          taken[idx] = true;
          split.gen_demos.push_back(dataset.conversations[idx]);
          break;
        }
      }
    }
  }

  std::vector<std::size_t> rest;
  for (std::size_t idx : order) {
    if (!taken[idx]) rest.push_back(idx);
  }
  std::size_t pos = 0;
  auto take = [&](std::size_t n, std::vector<Conversation>& into) {
    for (std::size_t i = 0; i < n; ++i) into.push_back(dataset.conversations[rest[pos++]]);
  };
  take(spec.eval_demos, split.eval_demos);
  take(spec.n_val, split.val);
  take(spec.n_test, split.test);
  return split;
}

ConversationStats conversation_stats(const Dataset& dataset) {
  if (dataset.empty()) throw ValidationError("conversation_stats: empty dataset");
  ConversationStats s;
  s.conversations = dataset.size();
  for (const auto& c : dataset.conversations) {
    s.utterances += c.turns.size();
    for (const auto& t : c.turns) s.words += tokenize(t.text).size();
  }
  s.mean_utterances_per_conversation =
      static_cast<double>(s.utterances) / static_cast<double>(s.conversations);
  s.mean_words_per_utterance =
      s.utterances == 0 ? 0.0 : static_cast<double>(s.words) / static_cast<double>(s.utterances);
  return s;
}

}  // namespace emcee
