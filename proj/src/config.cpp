#include "emcee/config.hpp"

#include <fstream>
#include <sstream>

#include "emcee/echo_backend.hpp"
#include "emcee/error.hpp"
#include "emcee/prompt.hpp"
#include "emcee/remote_backend.hpp"
#include "emcee/toy_backend.hpp"

namespace emcee {

using nlohmann::json;

namespace {

std::string_view to_string(DemoPolicy p) {
  switch (p) {
    case DemoPolicy::none:
      return "none";
    case DemoPolicy::one:
      return "one";
    case DemoPolicy::zero_or_one:
      return "zero_or_one";
  }
  return "?";
}

DemoPolicy demo_policy_from_string(std::string_view s) {
  if (s == "none") return DemoPolicy::none;
  if (s == "one") return DemoPolicy::one;
  if (s == "zero_or_one") return DemoPolicy::zero_or_one;
  throw ConfigError("unknown demonstration policy '" + std::string(s) + "'");
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  if (p.empty()) return {};
  std::filesystem::path path(p);
  return path.is_relative() ? (base / path).lexically_normal() : path;
}

template <typename T>
void read(const json& j, const char* key, T& into) {
  if (j.contains(key) && !j.at(key).is_null()) into = j.at(key).get<T>();
}

}  // namespace

std::string default_generation_instruction() {
  return "Write a conversation between a user and an assistant about the static explanation "
         "below. The user asks questions about the prediction, the model and the explanation "
         "method; the assistant answers accurately and helps the user understand the "
         "explanation.";
}

std::string default_answer_instruction() {
  return "You are an assistant that helps users understand the static explanation below. "
         "Answer the user's questions about the prediction, the model and the explanation "
         "method accurately and clearly.";
}

std::map<XaiMethod, std::size_t> even_quota(std::size_t n) {
  std::map<XaiMethod, std::size_t> quota;
  const std::size_t methods = std::size(kAllXaiMethods);
  for (std::size_t i = 0; i < methods; ++i) {
    quota[kAllXaiMethods[i]] = n / methods + (i < n % methods ? 1 : 0);
  }
  return quota;
}

void PipelineConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (conversations_per_round == 0) throw ConfigError("conversations_per_round must be >= 1");
  std::size_t total = 0;
  for (const auto& [method, n] : quota) total += n;
  if (total != conversations_per_round) {
    throw ConfigError("per-method quotas sum to " + std::to_string(total) + ", expected " +
                      std::to_string(conversations_per_round));
  }
  sampler.validate();
  eval.sampler.validate();
  filter_policy.validate();
  if (epochs_per_round < 0) throw ConfigError("epochs_per_round must be >= 0");
  if (max_pairs == 0) throw ConfigError("max_pairs must be >= 1");
  if (max_turn_tokens == 0) throw ConfigError("max_turn_tokens must be >= 1");
  if (demo_batch_size == 0) throw ConfigError("demonstration batch size must be >= 1");
  if (generation_workers == 0) throw ConfigError("generation workers must be >= 1");
  if (eval.validation_shots < 0 || eval.validation_shots > 3) {
    throw ConfigError("validation_shots must be in 0..3");
  }
}

PipelineConfig desk_config() {
  PipelineConfig c;
  c.conversations_per_round = 20;
  c.quota = even_quota(20);
  c.rounds = 3;
  return c;
}

Ablation ablation_from_string(std::string_view name) {
  if (name == "none") return Ablation::none;
  if (name == "no-multiround") return Ablation::no_multiround;
  if (name == "no-penalty") return Ablation::no_penalty;
  if (name == "no-filter") return Ablation::no_filter;
  throw ConfigError("unknown ablation '" + std::string(name) + "'");
}

PipelineConfig apply_ablation(PipelineConfig config, Ablation ablation) {
  switch (ablation) {
    case Ablation::none:
      break;
    case Ablation::no_multiround:
      config.rounds = 1;
      break;
    case Ablation::no_penalty:
      config.sampler.penalty = 0.0;
      break;
    case Ablation::no_filter:
      config.filtering = false;
      break;
  }
  return config;
}

json pipeline_config_to_json(const PipelineConfig& c) {
  json quota = json::object();
  for (const auto& [m, n] : c.quota) quota[std::string(to_string(m))] = n;
  return {
      {"rounds", c.rounds},
      {"conversations_per_round", c.conversations_per_round},
      {"quota", quota},
      {"sampler",
       {{"temperature", c.sampler.temperature},
        {"penalty", c.sampler.penalty},
        {"top_k", c.top_k},
        {"scope", c.penalty_scope == PenaltyScope::round ? "round" : "conversation"}}},
      {"demonstrations", {{"policy", to_string(c.demo_policy)}, {"batch_size", c.demo_batch_size}}},
      {"epochs_per_round", c.epochs_per_round},
      {"finetune_params", c.finetune_params},
      {"filter",
       {{"enabled", c.filtering},
        {"granularity", to_string(c.filter_policy.granularity)},
        {"threshold", c.filter_policy.threshold},
        {"unknown_behavior", to_string(c.filter_policy.unknown_behavior)},
        {"workers", c.filter_workers}}},
      {"generation",
       {{"mode", c.generation_mode == GenerationMode::sequential ? "sequential" : "parallel"},
        {"workers", c.generation_workers},
        {"max_pairs", c.max_pairs},
        {"max_turn_tokens", c.max_turn_tokens}}},
      {"seed", c.seed},
      {"instructions", {{"generation", c.generation_instruction}, {"answer", c.answer_instruction}}},
      {"evaluation",
       {{"temperature", c.eval.sampler.temperature},
        {"penalty", c.eval.sampler.penalty},
        {"top_k", c.eval.top_k},
        {"max_reply_tokens", c.eval.max_reply_tokens},
        {"validation_shots", c.eval.validation_shots}}},
  };
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
  try {
    read(j, "rounds", c.rounds);
    const bool has_n = j.contains("conversations_per_round");
    read(j, "conversations_per_round", c.conversations_per_round);
    if (j.contains("quota")) {
      c.quota.clear();
      for (const auto& [name, n] : j.at("quota").items()) {
        c.quota[xai_method_from_string(name)] = n.get<std::size_t>();
      }
    } else if (has_n) {
      c.quota = even_quota(c.conversations_per_round);
    }
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      read(s, "temperature", c.sampler.temperature);
      read(s, "penalty", c.sampler.penalty);
      read(s, "top_k", c.top_k);
      if (s.contains("scope")) {
        const auto scope = s.at("scope").get<std::string>();
        if (scope == "round") {
          c.penalty_scope = PenaltyScope::round;
        } else if (scope == "conversation") {
          c.penalty_scope = PenaltyScope::conversation;
        } else {
          throw ConfigError("unknown penalty scope '" + scope + "'");
        }
      }
    }
    if (j.contains("demonstrations")) {
      const auto& d = j.at("demonstrations");
      if (d.contains("policy")) c.demo_policy = demo_policy_from_string(d.at("policy").get<std::string>());
      read(d, "batch_size", c.demo_batch_size);
    }
    read(j, "epochs_per_round", c.epochs_per_round);
    if (j.contains("finetune_params")) c.finetune_params = j.at("finetune_params");
    if (j.contains("filter")) {
      const auto& f = j.at("filter");
      read(f, "enabled", c.filtering);
      if (f.contains("granularity")) {
        c.filter_policy.granularity = granularity_from_string(f.at("granularity").get<std::string>());
      }
      read(f, "threshold", c.filter_policy.threshold);
      if (f.contains("unknown_behavior")) {
        c.filter_policy.unknown_behavior =
            unknown_behavior_from_string(f.at("unknown_behavior").get<std::string>());
      }
      read(f, "workers", c.filter_workers);
    }
    if (j.contains("generation")) {
      const auto& g = j.at("generation");
      if (g.contains("mode")) {
        const auto mode = g.at("mode").get<std::string>();
        if (mode == "sequential") {
          c.generation_mode = GenerationMode::sequential;
        } else if (mode == "parallel") {
          c.generation_mode = GenerationMode::parallel;
        } else {
          throw ConfigError("unknown generation mode '" + mode + "'");
        }
      }
      read(g, "workers", c.generation_workers);
      read(g, "max_pairs", c.max_pairs);
      read(g, "max_turn_tokens", c.max_turn_tokens);
    }
    read(j, "seed", c.seed);
    if (j.contains("instructions")) {
      read(j.at("instructions"), "generation", c.generation_instruction);
      read(j.at("instructions"), "answer", c.answer_instruction);
    }
    if (j.contains("evaluation")) {
      const auto& e = j.at("evaluation");
      read(e, "temperature", c.eval.sampler.temperature);
      read(e, "penalty", c.eval.sampler.penalty);
      read(e, "top_k", c.eval.top_k);
      read(e, "max_reply_tokens", c.eval.max_reply_tokens);
      read(e, "validation_shots", c.eval.validation_shots);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed pipeline config: ") + e.what());
  } catch (const ValidationError& e) {
    throw ConfigError(std::string("malformed pipeline config: ") + e.what());
  }
  if (c.generation_instruction.empty()) c.generation_instruction = default_generation_instruction();
  if (c.answer_instruction.empty()) c.answer_instruction = default_answer_instruction();
  return c;
}

RunConfig run_config_from_json(const json& j, const std::filesystem::path& base_dir) {
  RunConfig rc;
  rc.pipeline = pipeline_config_from_json(j.value("pipeline", json::object()));
  try {
    if (j.contains("backend")) {
      const auto& b = j.at("backend");
      read(b, "kind", rc.backend.kind);
      rc.backend.seed_corpus = resolve(base_dir, b.value("seed_corpus", ""));
      rc.backend.checkpoint = resolve(base_dir, b.value("checkpoint", ""));
      read(b, "order", rc.backend.order);
      read(b, "alpha", rc.backend.alpha);
      read(b, "url", rc.backend.url);
    }
    if (j.contains("detector")) {
      const auto& d = j.at("detector");
      read(d, "kind", rc.detector.kind);
      rc.detector.table = resolve(base_dir, d.value("table", ""));
      read(d, "url", rc.detector.url);
    }
    rc.contexts = resolve(base_dir, j.value("contexts", ""));
    rc.human_corpus = resolve(base_dir, j.value("human_corpus", ""));
    if (j.contains("split")) {
      const auto& s = j.at("split");
      read(s, "gen_demos", rc.split.gen_demos);
      read(s, "eval_demos", rc.split.eval_demos);
      read(s, "n_val", rc.split.n_val);
      read(s, "n_test", rc.split.n_test);
      read(s, "seed", rc.split.seed);
      read(s, "all_test", rc.split.all_test);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
  return rc;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return run_config_from_json(j, path.parent_path());
}

BackendSpec parse_backend_flag(const std::string& flag, BackendSpec base) {
  if (flag == "toy" || flag == "echo") {
    base.kind = flag;
  } else if (flag.rfind("remote:", 0) == 0) {
    base.kind = "remote";
    base.url = flag.substr(7);
  } else {
    throw ConfigError("--backend expects toy, echo or remote:URL");
  }
  return base;
}

DetectorSpec parse_detector_flag(const std::string& flag, DetectorSpec base) {
  if (flag == "none") {
    base.kind = "none";
  } else if (flag.rfind("rule:", 0) == 0) {
    base.kind = "rule";
    base.table = flag.substr(5);
  } else if (flag.rfind("remote:", 0) == 0) {
    base.kind = "remote";
    base.url = flag.substr(7);
  } else {
    throw ConfigError("--detector expects rule:PATH, remote:URL or none");
  }
  return base;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (is_blank(line) || line.front() == '#') continue;
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> prompt_vocab_texts(const PipelineConfig& config, const ContextRegistry& contexts,
                                            const Dataset* human) {
  std::vector<std::string> texts = {config.generation_instruction, config.answer_instruction,
                                    kUserPrefix, kAssistantPrefix,
                                    "[Context] [Conversation] [Demonstration 1 2 3]"};
  for (const auto& c : contexts.contexts()) texts.push_back(render_context_block(c));
  if (human) {
    for (const auto& c : human->conversations) {
      for (const auto& t : c.turns) texts.push_back(t.text);
    }
  }
  return texts;
}

std::unique_ptr<Backend> make_backend(const BackendSpec& spec, const PipelineConfig& config,
                                      std::span<const std::string> extra_vocab_texts) {
  if (spec.kind == "toy") {
    if (!spec.checkpoint.empty()) {
      return std::make_unique<ToyBackend>(ToyBackend::load_checkpoint(spec.checkpoint));
    }
    if (spec.seed_corpus.empty()) throw ConfigError("toy backend needs a seed corpus");
    const auto sentences = read_lines(spec.seed_corpus);
    return std::make_unique<ToyBackend>(
        ToyBackend::from_corpus(sentences, {spec.order, spec.alpha}, extra_vocab_texts));
  }
  if (spec.kind == "echo") {
    std::vector<std::string> texts(extra_vocab_texts.begin(), extra_vocab_texts.end());
    if (!spec.seed_corpus.empty()) {
      for (auto& line : read_lines(spec.seed_corpus)) texts.push_back(std::move(line));
    }
    return std::make_unique<EchoBackend>(Vocabulary::from_texts(texts),
                                         EchoBackend::repeat_last_user());
  }
  if (spec.kind == "remote") {
    if (spec.url.empty()) throw ConfigError("remote backend needs a URL");
    RemoteOptions options;
    options.finetune_params = config.finetune_params;
    return std::make_unique<RemoteBackend>(spec.url, options);
  }
  throw ConfigError("unknown backend kind '" + spec.kind + "'");
}

std::unique_ptr<Detector> make_detector(const DetectorSpec& spec, const FilterPolicy& policy) {
  if (spec.kind == "none") return std::make_unique<PassThroughDetector>();
  if (spec.kind == "rule") {
    if (spec.table.empty()) throw ConfigError("rule detector needs a labeled sentence table");
    const auto set = load_labeled_sentences(spec.table, true);
    return std::make_unique<RuleDetector>(set.sentences, policy.unknown_behavior);
  }
  if (spec.kind == "remote") {
    if (spec.url.empty()) throw ConfigError("remote detector needs a URL");
    return std::make_unique<RemoteDetector>(spec.url, policy.threshold);
  }
  throw ConfigError("unknown detector kind '" + spec.kind + "'");
}

}  // namespace emcee
