// emcee: command-line driver for the generate -> filter -> finetune loop.

#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "emcee/config.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/detector.hpp"
#include "emcee/fewshot.hpp"
#include "emcee/metrics.hpp"
#include "emcee/pipeline.hpp"
#include "emcee/serve.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace emcee;

namespace {

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> rounds;
  std::optional<double> penalty;
  std::optional<double> temperature;
  std::optional<std::size_t> conversations;
  std::string backend;
  std::string detector;
  std::string ablation = "none";
  std::string contexts;
  std::string seed_corpus;
  std::string human;
  std::string out;
};

// Everything a subcommand may need, resolved from the config file and flags.
struct Setup {
  RunConfig rc;
  ContextRegistry contexts;
  std::optional<Dataset> human;
  DatasetSplit split;
};

Setup prepare(const Flags& f) {
  Setup s;
  if (!f.config.empty()) s.rc = load_run_config(f.config);
  auto& p = s.rc.pipeline;
  if (f.conversations) {
    p.conversations_per_round = *f.conversations;
    p.quota = even_quota(*f.conversations);
  }
  if (f.seed) p.seed = *f.seed;
  if (f.rounds) p.rounds = *f.rounds;
  if (f.penalty) p.sampler.penalty = *f.penalty;
  if (f.temperature) p.sampler.temperature = *f.temperature;
  p = apply_ablation(p, ablation_from_string(f.ablation));
  if (p.generation_instruction.empty()) p.generation_instruction = default_generation_instruction();
  if (p.answer_instruction.empty()) p.answer_instruction = default_answer_instruction();
  if (!f.backend.empty()) s.rc.backend = parse_backend_flag(f.backend, s.rc.backend);
  if (!f.detector.empty()) s.rc.detector = parse_detector_flag(f.detector, s.rc.detector);
  if (!f.contexts.empty()) s.rc.contexts = f.contexts;
  if (!f.seed_corpus.empty()) s.rc.backend.seed_corpus = f.seed_corpus;
  if (!f.human.empty()) s.rc.human_corpus = f.human;

  if (!s.rc.contexts.empty()) s.contexts = ContextRegistry::load(s.rc.contexts);
  if (!s.rc.human_corpus.empty()) {
    s.human = load_dataset(s.rc.human_corpus);
    const auto& sp = s.rc.split;
    if (sp.all_test) {
      s.split.test = s.human->conversations;
    } else if (sp.gen_demos + sp.eval_demos + sp.n_val + sp.n_test > 0) {
      s.split = split_dataset(*s.human, sp.seed, {sp.gen_demos, sp.eval_demos, sp.n_val, sp.n_test},
                              s.contexts);
    }
  }
  return s;
}

std::vector<std::string> vocab_texts(const Setup& s) {
  return prompt_vocab_texts(s.rc.pipeline, s.contexts, s.human ? &*s.human : nullptr);
}

std::unique_ptr<Backend> backend_for(const Setup& s) {
  const auto texts = vocab_texts(s);
  return make_backend(s.rc.backend, s.rc.pipeline, texts);
}

PipelineData data_for(const Setup& s) { return {s.split.gen_demos, s.split.eval_demos, s.split.val}; }

void require_contexts(const Setup& s) {
  if (s.contexts.empty()) throw ConfigError("no explanation contexts; pass --contexts or --config");
}

void print_round(const RoundSummary& r) {
  std::printf("round %d  version %llu -> %llu  generated %zu  clean %zu  distinct-2 %.4f  %s\n",
              r.round, static_cast<unsigned long long>(r.version_before),
              static_cast<unsigned long long>(r.version_after), r.metrics.generated, r.metrics.clean,
              r.metrics.distinct2_generated, r.directory.c_str());
}

std::vector<int> parse_shots(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("--shots expects a comma-separated list of integers");
    }
  }
  return out;
}

HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-training conversational explanation agents"};
  app.require_subcommand(1);
  app.fallthrough();

  Flags f;
  app.add_option("--config", f.config, "Run config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", f.seed, "Base seed");
  app.add_option("--rounds", f.rounds, "Number of rounds R");
  app.add_option("-n,--conversations", f.conversations, "Conversations per round, split evenly");
  app.add_option("--penalty", f.penalty, "Repetition penalty theta");
  app.add_option("--temperature", f.temperature, "Sampling temperature T");
  app.add_option("--backend", f.backend, "toy | echo | remote:URL");
  app.add_option("--detector", f.detector, "rule:PATH | remote:URL | none");
  app.add_option("--ablation", f.ablation, "none | no-multiround | no-penalty | no-filter");
  app.add_option("--contexts", f.contexts, "Explanation contexts (JSON)");
  app.add_option("--seed-corpus", f.seed_corpus, "Seed sentences for the toy backend");
  app.add_option("--human", f.human, "Human conversation corpus (JSONL)");
  app.add_option("--out", f.out, "Output directory or file");

  int round = 1;
  std::string input;
  std::string shots = "0,1,2,3";
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string data_dir = "serve-data";
  int serve_demos = 0;

  auto* gen = app.add_subcommand("gen", "Generate one round of synthetic conversations");
  gen->add_option("--round", round, "Round tag")->check(CLI::PositiveNumber);
  auto* filter = app.add_subcommand("filter", "Remove pairs with flagged machine turns");
  filter->add_option("--in", input, "Conversation JSONL")->required()->check(CLI::ExistingFile);
  auto* train = app.add_subcommand("train", "Run one generate/filter/finetune round");
  train->add_option("--round", round, "Round index")->check(CLI::PositiveNumber);
  auto* run = app.add_subcommand("run", "Run every round");
  auto* eval = app.add_subcommand("eval", "Few-shot evaluation table");
  eval->add_option("--shots", shots, "Comma-separated shot counts");
  auto* stats = app.add_subcommand("stats", "Corpus statistics");
  stats->add_option("--in", input, "Conversation JSONL (default: the human corpus)");
  auto* serve = app.add_subcommand("serve", "HTTP chat service");
  serve->add_option("--host", host);
  serve->add_option("--port", port);
  serve->add_option("--data-dir", data_dir, "Session transcripts directory");
  serve->add_option("--demos", serve_demos, "Demonstrations per prompt (0-3)")->check(CLI::Range(0, 3));

  CLI11_PARSE(app, argc, argv);

  try {
    Setup s = prepare(f);
    const auto& p = s.rc.pipeline;

    if (gen->parsed()) {
      require_contexts(s);
      auto backend = backend_for(s);
      const auto d = generate_round(*backend, p, s.contexts, round, s.split.gen_demos);
      const std::string text = dataset_to_jsonl(d);
      if (f.out.empty()) {
        std::cout << text;
      } else {
        save_dataset(d, f.out);
        std::fprintf(stderr, "wrote %zu conversations to %s\n", d.size(), f.out.c_str());
      }
    } else if (filter->parsed()) {
      const auto d = load_dataset(input);
      const auto detector = make_detector(s.rc.detector, p.filter_policy);
      const auto result = filter_dataset(d, *detector, p.filter_policy, p.filter_workers);
      if (f.out.empty()) {
        std::cout << dataset_to_jsonl(result.clean);
      } else {
        fs::create_directories(f.out);
        save_dataset(result.clean, fs::path(f.out) / "clean.jsonl");
        std::ofstream(fs::path(f.out) / "filter_report.json") << json(result.report).dump(2) << '\n';
      }
      std::fprintf(stderr, "pairs %zu, removed %zu, conversations dropped %zu\n",
                   result.report.pairs_in, result.report.pairs_removed,
                   result.report.conversations_dropped);
    } else if (train->parsed() || run->parsed()) {
      require_contexts(s);
      auto backend = backend_for(s);
      const auto detector = make_detector(s.rc.detector, p.filter_policy);
      std::optional<fs::path> out;
      if (!f.out.empty()) out = fs::path(f.out);
      Pipeline pipeline(*backend, *detector, s.contexts, p, data_for(s), out);
      if (train->parsed()) {
        const auto st = pipeline.run_round(round);
        print_round({st.round, st.version_before, st.version_after, st.directory, st.checkpoint,
                     st.filter.pairs_removed, st.metrics});
      } else {
        const auto report = pipeline.run();
        for (const auto& r : report.rounds) print_round(r);
        if (report.aborted) {
          std::fprintf(stderr, "aborted: %s\n", report.aborted->c_str());
          return 3;
        }
      }
    } else if (eval->parsed()) {
      require_contexts(s);
      if (s.split.test.empty()) throw ConfigError("no test conversations; configure a split");
      auto backend = backend_for(s);
      FewshotOptions options;
      options.instruction = p.answer_instruction;
      options.settings = p.eval;
      options.seed = p.seed;
      const auto ks = parse_shots(shots);
      const auto rows =
          evaluate_fewshot(*backend, s.contexts, s.split.eval_demos, s.split.test, ks, options);
      std::cout << format_fewshot_table(rows);
      if (!f.out.empty()) std::ofstream(f.out) << fewshot_to_json(rows).dump(2) << '\n';
    } else if (stats->parsed()) {
      Dataset d;
      if (!input.empty()) {
        d = load_dataset(input);
      } else if (s.human) {
        d = *s.human;
      } else {
        throw ConfigError("stats needs --in or a human corpus");
      }
      const auto st = conversation_stats(d);
      std::printf("conversations                 %zu\n", st.conversations);
      std::printf("utterances                    %zu\n", st.utterances);
      std::printf("words                         %zu\n", st.words);
      std::printf("utterances per conversation   %.2f\n", st.mean_utterances_per_conversation);
      std::printf("words per utterance           %.2f\n", st.mean_words_per_utterance);
    } else if (serve->parsed()) {
      require_contexts(s);
      auto backend = backend_for(s);
      ServeOptions options;
      options.instruction = p.answer_instruction;
      if (static_cast<std::size_t>(serve_demos) > s.split.eval_demos.size()) {
        throw ConfigError("--demos exceeds the configured evaluation demonstrations");
      }
      options.demonstrations.assign(s.split.eval_demos.begin(),
                                    s.split.eval_demos.begin() + serve_demos);
      ConversationService service(*backend, s.contexts, data_dir, options);
      HttpServer server(service);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::fprintf(stderr, "listening on http://%s:%d\n", host.c_str(), bound);
      server.serve();
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
