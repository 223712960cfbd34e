#include "support/fixtures.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "emcee/config.hpp"
#include "emcee/toy_backend.hpp"

namespace emcee::testing {

namespace fs = std::filesystem;

fs::path source_path(const std::string& relative) { return fs::path(EMCEE_SOURCE_DIR) / relative; }

TempDir::TempDir() {
  std::string pattern = (fs::temp_directory_path() / "emcee-test-XXXXXX").string();
  if (!mkdtemp(pattern.data())) throw std::runtime_error("mkdtemp failed");
  path_ = pattern;
}

TempDir::~TempDir() {
  std::error_code ec;
  fs::remove_all(path_, ec);
}

Conversation make_conversation(std::string id, std::string context_ref, const Pairs& pairs,
                               int round) {
  Conversation c;
  c.id = std::move(id);
  c.context_ref = std::move(context_ref);
  c.round = round;
  for (const auto& [human, machine] : pairs) {
    c.turns.push_back({Role::human, human, {}});
    c.turns.push_back({Role::machine, machine, {}});
  }
  return c;
}

ContextRegistry shipped_contexts() { return ContextRegistry::load(source_path("data/contexts.json")); }

std::vector<std::string> seed_sentences() { return read_lines(source_path("data/seed_corpus.txt")); }

std::vector<LabeledSentence> hallucination_table() {
  return load_labeled_sentences(source_path("data/hallucination_table.csv"), false).sentences;
}

std::unique_ptr<Backend> desk_toy_backend(double alpha) {
  return std::make_unique<ToyBackend>(ToyBackend::from_corpus(seed_sentences(), {3, alpha}));
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string random_word(Rng& rng) {
  static const char* kWords[] = {"model",  "image",   "pixel",  "heatmap", "layer",  "score",
                                 "lime",   "shap",    "region", "feature", "the",    "a",
                                 "why",    "what",    "does",   "show",    "red",    "blue",
                                 "class",  "predict", "weight", "grad",    "cam",    "path",
                                 "base",   "line",    "value",  "fish",    "cat",    "cup"};
  return kWords[rng.uniform_index(std::size(kWords))];
}

std::string random_sentence(Rng& rng, std::size_t min_words, std::size_t max_words) {
  const std::size_t n = min_words + rng.uniform_index(max_words - min_words + 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += random_word(rng);
  }
  static const char* kEnds[] = {".", "?", "!", ""};
  out += kEnds[rng.uniform_index(4)];
  return out;
}

std::vector<std::string> random_tokens(Rng& rng, std::size_t max_len, std::size_t alphabet) {
  std::vector<std::string> out(rng.uniform_index(max_len + 1));
  for (auto& t : out) t = std::string(1, static_cast<char>('a' + rng.uniform_index(alphabet)));
  return out;
}

Conversation random_conversation(Rng& rng, std::string id, std::string context_ref, int round) {
  Conversation c;
  c.id = std::move(id);
  c.context_ref = std::move(context_ref);
  c.round = round;
  const std::size_t turns = 1 + rng.uniform_index(8);
  for (std::size_t i = 0; i < turns; ++i) {
    c.turns.push_back({i % 2 == 0 ? Role::human : Role::machine, random_sentence(rng, 1, 9), {}});
  }
  if (rng.coin()) c.meta["source"] = "gen \"quoted\" \\ " + random_word(rng);
  return c;
}

}  // namespace emcee::testing
