#include "emcee/toy_backend.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "emcee/error.hpp"

namespace emcee {

using nlohmann::json;

ToyNgramModel::ToyNgramModel(std::size_t vocab_size, int order, double alpha)
    : vocab_size_(vocab_size), order_(order), alpha_(alpha) {
  if (order < 1) throw ConfigError("n-gram order must be >= 1");
  if (!(alpha > 0)) throw ConfigError("additive smoothing alpha must be > 0");
  if (vocab_size == 0) throw ConfigError("n-gram model needs a non-empty vocabulary");
}

void ToyNgramModel::add_sequence(std::span<const TokenId> sequence, double weight) {
  if (weight < 0) throw ValidationError("n-gram counts cannot decrease");
  if (weight == 0) return;
  const auto ctx_len = static_cast<std::size_t>(order_ - 1);
  for (std::size_t i = ctx_len; i < sequence.size(); ++i) {
    const TokenId token = sequence[i];
    if (token < 0 || static_cast<std::size_t>(token) >= vocab_size_) {
      throw ValidationError("n-gram model: token id " + std::to_string(token) + " out of vocabulary");
    }
    auto& entry = table_[std::vector<TokenId>(sequence.begin() + static_cast<std::ptrdiff_t>(i - ctx_len),
                                              sequence.begin() + static_cast<std::ptrdiff_t>(i))];
    entry.counts[token] += weight;
    entry.total += weight;
  }
}

std::vector<TokenId> ToyNgramModel::context_of(std::span<const TokenId> prefix, TokenId bos) const {
  const auto ctx_len = static_cast<std::size_t>(order_ - 1);
  std::vector<TokenId> ctx(ctx_len, bos);
  const std::size_t take = std::min(ctx_len, prefix.size());
  std::copy(prefix.end() - static_cast<std::ptrdiff_t>(take), prefix.end(),
            ctx.end() - static_cast<std::ptrdiff_t>(take));
  return ctx;
}

double ToyNgramModel::count(std::span<const TokenId> context, TokenId token) const {
  auto it = table_.find(std::vector<TokenId>(context.begin(), context.end()));
  if (it == table_.end()) return 0;
  auto c = it->second.counts.find(token);
  return c == it->second.counts.end() ? 0 : c->second;
}

double ToyNgramModel::context_total(std::span<const TokenId> context) const {
  auto it = table_.find(std::vector<TokenId>(context.begin(), context.end()));
  return it == table_.end() ? 0 : it->second.total;
}

double ToyNgramModel::probability(std::span<const TokenId> context, TokenId token) const {
  const double v = static_cast<double>(vocab_size_);
  return (count(context, token) + alpha_) / (context_total(context) + alpha_ * v);
}

LogitVector ToyNgramModel::logits(std::span<const TokenId> prefix, TokenId bos) const {
  const auto ctx = context_of(prefix, bos);
  const double v = static_cast<double>(vocab_size_);
  auto it = table_.find(ctx);
  const double total = it == table_.end() ? 0.0 : it->second.total;
  const double denom = total + alpha_ * v;
  LogitVector out(vocab_size_, std::log(alpha_ / denom));
  if (it != table_.end()) {
    for (const auto& [token, c] : it->second.counts) {
      out[static_cast<std::size_t>(token)] = std::log((c + alpha_) / denom);
    }
  }
  return out;
}

json ToyNgramModel::to_json() const {
  json counts = json::array();
  for (const auto& [ctx, entry] : table_) {
    for (const auto& [token, c] : entry.counts) {
      json row = json::array();
      for (TokenId t : ctx) row.push_back(t);
      row.push_back(token);
      row.push_back(c);
      counts.push_back(std::move(row));
    }
  }
  return {{"order", order_}, {"alpha", alpha_}, {"vocab_size", vocab_size_}, {"counts", counts}};
}

ToyNgramModel ToyNgramModel::from_json(const json& j) {
  ToyNgramModel model(j.at("vocab_size").get<std::size_t>(), j.at("order").get<int>(),
                      j.at("alpha").get<double>());
  const auto ctx_len = static_cast<std::size_t>(model.order_ - 1);
  for (const auto& row : j.at("counts")) {
    if (row.size() != ctx_len + 2) throw ValidationError("malformed n-gram count row");
    std::vector<TokenId> ctx;
    for (std::size_t i = 0; i < ctx_len; ++i) ctx.push_back(row[i].get<TokenId>());
    const auto token = row[ctx_len].get<TokenId>();
    const auto c = row[ctx_len + 1].get<double>();
    auto& entry = model.table_[ctx];
    entry.counts[token] += c;
    entry.total += c;
  }
  return model;
}

ToyBackend::ToyBackend(Vocabulary vocab, ToyNgramModel model, std::uint64_t version)
    : vocab_(std::move(vocab)), current_(version) {
  if (model.vocab_size() != vocab_.size()) {
    throw ValidationError("n-gram model size does not match the vocabulary");
  }
  models_.emplace(version, std::make_shared<const ToyNgramModel>(std::move(model)));
}

ToyBackend ToyBackend::from_corpus(std::span<const std::string> sentences, ToyOptions options,
                                   std::span<const std::string> extra_vocab_texts) {
  std::vector<std::string> texts(sentences.begin(), sentences.end());
  texts.insert(texts.end(), extra_vocab_texts.begin(), extra_vocab_texts.end());
  Vocabulary vocab = Vocabulary::from_texts(texts);
  ToyNgramModel model(vocab.size(), options.order, options.alpha);
  const std::vector<TokenId> pad(static_cast<std::size_t>(options.order - 1), vocab.bos());
  for (const auto& s : sentences) {
    auto seq = pad;
    const auto ids = vocab.encode(s);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(vocab.eos());
    model.add_sequence(seq, 1.0);
  }
  return ToyBackend(std::move(vocab), std::move(model));
}

const ToyNgramModel& ToyBackend::model(std::uint64_t version) const {
  auto it = models_.find(version);
  if (it == models_.end()) {
    throw NotFoundError("toy backend has no version " + std::to_string(version));
  }
  return *it->second;
}

std::vector<std::uint64_t> ToyBackend::versions() const {
  std::vector<std::uint64_t> out;
  for (const auto& [v, m] : models_) out.push_back(v);
  return out;
}

LogitVector ToyBackend::logits(std::span<const TokenId> prefix) const {
  return logits_at(current_, prefix);
}

LogitVector ToyBackend::logits_at(std::uint64_t version, std::span<const TokenId> prefix) const {
  for (TokenId t : prefix) {
    if (!vocab_.contains(t)) {
      throw ValidationError("prefix token id " + std::to_string(t) + " out of vocabulary");
    }
  }
  return model(version).logits(prefix, vocab_.bos());
}

std::vector<std::vector<TokenId>> ToyBackend::training_sequences(
    const Conversation& conversation) const {
  const auto order = static_cast<std::size_t>(model().order());
  const std::vector<TokenId> pad(order - 1, vocab_.bos());
  std::vector<std::vector<TokenId>> out;
  for (const auto& turn : conversation.turns) {
    auto seq = pad;
    const auto ids = turn_tokens(turn, vocab_);
    seq.insert(seq.end(), ids.begin(), ids.end());
    seq.push_back(vocab_.eos());
    out.push_back(std::move(seq));
  }
  auto end = pad;
  end.push_back(vocab_.sep());
  out.push_back(std::move(end));
  return out;
}

std::uint64_t ToyBackend::finetune(const Dataset& dataset, int epochs) {
  if (dataset.empty()) {
    throw ValidationError("refusing to finetune on an empty dataset");
  }
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  ToyNgramModel next = model();
  for (const auto& conversation : dataset.conversations) {
    for (const auto& seq : training_sequences(conversation)) {
      next.add_sequence(seq, static_cast<double>(epochs));
    }
  }
  const std::uint64_t version = models_.rbegin()->first + 1;
  models_.emplace(version, std::make_shared<const ToyNgramModel>(std::move(next)));
  current_ = version;
  return version;
}

std::vector<TokenId> ToyBackend::encode_prompt(std::string_view prompt) const {
  auto ids = tokenize_text(prompt);
  ids.insert(ids.end(), static_cast<std::size_t>(model().order() - 1), vocab_.bos());
  return ids;
}

std::string ToyBackend::save_checkpoint(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  const std::string name = "toy-v" + std::to_string(current_) + ".json";
  const json doc = {{"kind", to_string(kind())},
                    {"version", current_},
                    {"vocab", vocab_.tokens()},
                    {"model", model().to_json()}};
  std::ofstream out(dir / name, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + (dir / name).string());
  out << doc.dump() << '\n';
  return name;
}

ToyBackend ToyBackend::load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const json doc = json::parse(buf.str());
  if (doc.at("kind").get<std::string>() != to_string(BackendKind::toy_ngram)) {
    throw ValidationError(path.string() + " is not a toy n-gram checkpoint");
  }
  return ToyBackend(Vocabulary(doc.at("vocab").get<std::vector<std::string>>()),
                    ToyNgramModel::from_json(doc.at("model")), doc.at("version").get<std::uint64_t>());
}

}  // namespace emcee
