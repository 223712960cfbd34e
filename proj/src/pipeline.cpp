#include "emcee/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include "emcee/fewshot.hpp"
#include "emcee/hash.hpp"
#include "emcee/prompt.hpp"
#include "emcee/rng.hpp"
#include "emcee/sampler.hpp"

namespace emcee {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Empty turns are resampled this many times before generation gives up.
constexpr int kTurnAttempts = 8;

std::string conversation_id(int round, std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "r%02d-c%05zu", round, index);
  return buf;
}

std::string round_dir_name(int round, const std::string& digest) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "round-%02d-%s", round, digest.substr(0, 12).c_str());
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

struct Job {
  std::size_t index;
  const ExplanationContext* context;
  const Conversation* demo;
};

Conversation self_play(const Backend& backend, const PipelineConfig& config, const Job& job,
                       int round, PenaltySet& penalized) {
  Conversation conversation{conversation_id(round, job.index), job.context->id, {}, round, {}};
  conversation.meta["xai_method"] = std::string(to_string(job.context->xai_method));
  conversation.meta["demonstration"] = job.demo ? job.demo->id : "";

  Rng rng(derive_seed(config.seed, static_cast<std::uint64_t>(round), job.index));
  PromptSpec spec;
  spec.instruction = config.generation_instruction;
  spec.context = *job.context;
  if (job.demo) spec.demonstrations.push_back(*job.demo);

  const StopSpec stop{backend.stop_tokens(), config.max_turn_tokens, config.top_k};
  const TokenId sep = backend.vocab().sep();

  for (std::size_t pair = 0; pair < config.max_pairs; ++pair) {
    bool finished = false;
    for (Role role : {Role::human, Role::machine}) {
      spec.history = conversation.turns;
      spec.next_role = role;
      const auto prompt = backend.encode_prompt(assemble_prompt(spec));
      bool accepted = false;
      for (int attempt = 0; attempt < kTurnAttempts && !accepted; ++attempt) {
        auto out = generate_turn(backend, prompt, config.sampler, penalized, stop, rng);
        const bool ends = out.stopped_by && *out.stopped_by == sep;
        // A user who has nothing more to ask closes the conversation.
        if (role == Role::human && ends && pair > 0) {
          finished = true;
          break;
        }
        if (out.tokens.empty()) continue;
        auto text = backend.detokenize(out.tokens);
        if (is_blank(text)) continue;
        conversation.turns.push_back({role, std::move(text), std::move(out.tokens)});
        accepted = true;
        if (role == Role::machine && ends) finished = true;
      }
      if (finished && !accepted) break;
      if (!accepted) {
        throw GenerationError("conversation " + conversation.id + ": no non-empty " +
                              std::string(to_string(role)) + " turn after " +
                              std::to_string(kTurnAttempts) + " attempts");
      }
    }
    if (finished) break;
  }
  return conversation;
}

std::vector<Job> plan_round(const PipelineConfig& config, const ContextRegistry& contexts, int round,
                            std::span<const Conversation> gen_demos) {
  std::vector<Job> jobs;
  jobs.reserve(config.conversations_per_round);
  for (XaiMethod method : kAllXaiMethods) {
    const auto it = config.quota.find(method);
    const std::size_t quota = it == config.quota.end() ? 0 : it->second;
    if (quota == 0) continue;
    const auto candidates = contexts.by_method(method);
    if (candidates.empty()) {
      throw ConfigError("no explanation context for " + std::string(to_string(method)) +
                        ", which has a quota of " + std::to_string(quota));
    }
    const Conversation* demo = nullptr;
    for (const auto& d : gen_demos) {
      const auto* ctx = contexts.find(d.context_ref);
      if (ctx && ctx->xai_method == method) {
        demo = &d;
        break;
      }
    }
    for (std::size_t q = 0; q < quota; ++q) {
      const std::size_t index = jobs.size();
      Rng pick(derive_seed(config.seed ^ 0x636f6e74ULL, static_cast<std::uint64_t>(round), index));
      jobs.push_back({index, candidates[pick.uniform_index(candidates.size())], demo});
    }
  }
  // The demonstration decision is shared by each batch of consecutive conversations.
  for (auto& job : jobs) {
    const std::size_t batch = job.index / config.demo_batch_size;
    bool use = false;
    switch (config.demo_policy) {
      case DemoPolicy::none:
        break;
      case DemoPolicy::one:
        use = true;
        break;
      case DemoPolicy::zero_or_one: {
        Rng coin(derive_seed(config.seed ^ 0x64656d6fULL, static_cast<std::uint64_t>(round), batch));
        use = coin.coin();
        break;
      }
    }
    if (!use) job.demo = nullptr;
  }
  return jobs;
}

std::vector<std::string> utterances(const Dataset& dataset) {
  std::vector<std::string> out;
  for (const auto& c : dataset.conversations) {
    for (const auto& t : c.turns) out.push_back(t.text);
  }
  return out;
}

}  // namespace

double dataset_distinct(const Dataset& dataset, int n) {
  const auto texts = utterances(dataset);
  return distinct_n(texts, n);
}

Dataset generate_round(const Backend& backend, const PipelineConfig& config,
                       const ContextRegistry& contexts, int round,
                       std::span<const Conversation> gen_demos) {
  config.validate();
  const auto jobs = plan_round(config, contexts, round, gen_demos);

  Dataset dataset;
  dataset.provenance = Provenance::synthetic;
  dataset.round = round;
  dataset.conversations.resize(jobs.size());
  PenaltySet shared(backend.vocab().size(), round);

  if (config.generation_mode == GenerationMode::sequential) {
    for (const auto& job : jobs) {
      if (config.penalty_scope == PenaltyScope::conversation) {
        PenaltySet own(backend.vocab().size(), round);
        dataset.conversations[job.index] = self_play(backend, config, job, round, own);
      } else {
        dataset.conversations[job.index] = self_play(backend, config, job, round, shared);
      }
    }
    return dataset;
  }

  // Parallel: each batch of workers starts from a snapshot of G; the batch's
  // emissions are merged back in conversation order before the next batch.
  const std::size_t workers = config.generation_workers;
  for (std::size_t start = 0; start < jobs.size(); start += workers) {
    const std::size_t end = std::min(jobs.size(), start + workers);
    std::vector<PenaltySet> local;
    for (std::size_t i = start; i < end; ++i) {
      local.push_back(config.penalty_scope == PenaltyScope::conversation
                          ? PenaltySet(backend.vocab().size(), round)
                          : shared);
    }
    std::vector<std::exception_ptr> errors(end - start);
    std::vector<std::thread> threads;
    for (std::size_t i = start; i < end; ++i) {
      threads.emplace_back([&, i] {
        try {
          dataset.conversations[i] = self_play(backend, config, jobs[i], round, local[i - start]);
        } catch (...) {
          errors[i - start] = std::current_exception();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    if (config.penalty_scope == PenaltyScope::round) {
      for (const auto& g : local) shared.merge(g);
    }
  }
  return dataset;
}

void to_json(json& j, const RoundMetrics& m) {
  j = {{"generated", m.generated},
       {"clean", m.clean},
       {"distinct1_generated", m.distinct1_generated},
       {"distinct2_generated", m.distinct2_generated},
       {"distinct1_clean", m.distinct1_clean},
       {"distinct2_clean", m.distinct2_clean},
       {"val", m.val ? json(*m.val) : json(nullptr)}};
}

RoundAborted::RoundAborted(int round, FilterReport report)
    : Error("round " + std::to_string(round) +
            ": every generated conversation was removed by the filter; nothing to finetune on"),
      round_(round),
      report_(std::move(report)) {}

json PipelineReport::to_json() const {
  json rows = json::array();
  json d1 = json::array(), d2 = json::array(), bleu4 = json::array(), rouge_l = json::array();
  for (const auto& r : rounds) {
    rows.push_back({{"round", r.round},
                    {"version_before", r.version_before},
                    {"version_after", r.version_after},
                    {"directory", r.directory},
                    {"checkpoint", r.checkpoint},
                    {"pairs_removed", r.pairs_removed},
                    {"metrics", r.metrics}});
    d1.push_back(r.metrics.distinct1_generated);
    d2.push_back(r.metrics.distinct2_generated);
    bleu4.push_back(r.metrics.val ? json(r.metrics.val->bleu[3]) : json(nullptr));
    rouge_l.push_back(r.metrics.val ? json(r.metrics.val->rougeL) : json(nullptr));
  }
  return {{"rounds", rows},
          {"series",
           {{"distinct1", d1}, {"distinct2", d2}, {"val_bleu4", bleu4}, {"val_rougeL", rouge_l}}},
          {"aborted", aborted ? json(*aborted) : json(nullptr)}};
}

Pipeline::Pipeline(Backend& backend, const Detector& detector, const ContextRegistry& contexts,
                   PipelineConfig config, PipelineData data, std::optional<fs::path> out_dir)
    : backend_(backend),
      detector_(detector),
      contexts_(contexts),
      config_(std::move(config)),
      data_(std::move(data)),
      out_dir_(std::move(out_dir)) {
  config_.validate();
}

RoundState Pipeline::run_round(int round) {
  RoundState state;
  state.round = round;
  state.version_before = backend_.version();
  state.generated = generate_round(backend_, config_, contexts_, round, data_.gen_demos);

  if (config_.filtering) {
    auto result = filter_dataset(state.generated, detector_, config_.filter_policy,
                                 config_.filter_workers);
    state.clean = std::move(result.clean);
    state.filter = std::move(result.report);
  } else {
    auto result = filter_dataset(state.generated, PassThroughDetector{}, config_.filter_policy);
    state.clean = std::move(result.clean);
    state.filter = std::move(result.report);
  }
  state.clean.provenance = Provenance::synthetic;
  state.clean.round = round;

  auto& m = state.metrics;
  m.generated = state.generated.size();
  m.clean = state.clean.size();
  m.distinct1_generated = dataset_distinct(state.generated, 1);
  m.distinct2_generated = dataset_distinct(state.generated, 2);
  m.distinct1_clean = state.clean.empty() ? 0.0 : dataset_distinct(state.clean, 1);
  m.distinct2_clean = state.clean.empty() ? 0.0 : dataset_distinct(state.clean, 2);

  if (state.clean.empty()) {
    state.version_after = state.version_before;
    persist(state, nullptr);
    throw RoundAborted(round, state.filter);
  }

  // Only this round's clean data reaches the finetune call.
  const std::string clean_text = dataset_to_jsonl(state.clean);
  std::set<int> rounds_seen;
  for (const auto& c : state.clean.conversations) rounds_seen.insert(c.round);
  state.version_after = backend_.finetune(state.clean, config_.epochs_per_round);

  if (!data_.val.empty()) {
    FewshotOptions options;
    options.instruction = config_.answer_instruction;
    options.settings = config_.eval;
    options.seed = derive_seed(config_.seed, static_cast<std::uint64_t>(round), 0x76616cULL);
    const int shots[] = {config_.eval.validation_shots};
    m.val = evaluate_fewshot(backend_, contexts_, data_.eval_demos, data_.val, shots, options)
                .front()
                .report;
  }

  json audit = {{"round", round},
                {"version_before", state.version_before},
                {"version_after", state.version_after},
                {"dataset_sha256", sha256_hex(clean_text)},
                {"conversations", state.clean.size()},
                {"conversation_rounds", rounds_seen},
                {"epochs", config_.epochs_per_round},
                {"finetune_params", config_.finetune_params}};
  persist(state, audit);
  return state;
}

void Pipeline::persist(RoundState& state, const json& audit) {
  const std::string generated_text = dataset_to_jsonl(state.generated);
  state.directory = round_dir_name(state.round, sha256_hex(generated_text));
  if (!out_dir_) return;

  const fs::path dir = *out_dir_ / state.directory;
  fs::create_directories(dir);
  write_file(dir / "generated.jsonl", generated_text);
  write_file(dir / "clean.jsonl", dataset_to_jsonl(state.clean));
  write_file(dir / "filter_report.json", json(state.filter).dump(2) + "\n");
  write_file(dir / "metrics.json", json(state.metrics).dump(2) + "\n");
  if (audit.is_null()) return;

  state.checkpoint = backend_.save_checkpoint(dir);
  json entry = audit;
  entry["directory"] = state.directory;
  entry["checkpoint"] = state.checkpoint;
  write_file(dir / "finetune_audit.json", entry.dump(2) + "\n");
  std::ofstream log(*out_dir_ / "audit.jsonl", std::ios::binary | std::ios::app);
  if (!log) throw Error("cannot append to " + (*out_dir_ / "audit.jsonl").string());
  log << entry.dump() << '\n';
}

PipelineReport Pipeline::run() {
  report_ = {};
  auto write_report = [&] {
    if (!out_dir_) return;
    json doc = report_.to_json();
    doc["config"] = pipeline_config_to_json(config_);
    write_file(*out_dir_ / "report.json", doc.dump(2) + "\n");
  };
  if (out_dir_) {
    fs::create_directories(*out_dir_);
    write_file(*out_dir_ / "audit.jsonl", "");
  }
  for (int r = 1; r <= config_.rounds; ++r) {
    try {
      const auto state = run_round(r);
      report_.rounds.push_back({state.round, state.version_before, state.version_after,
                                state.directory, state.checkpoint, state.filter.pairs_removed,
                                state.metrics});
    } catch (const RoundAborted& e) {
      report_.aborted = e.what();
      break;
    }
    write_report();
  }
  write_report();
  return report_;
}

PipelineReport run_pipeline(Backend& backend, const Detector& detector,
                            const ContextRegistry& contexts, const PipelineConfig& config,
                            const PipelineData& data, std::optional<fs::path> out_dir) {
  Pipeline pipeline(backend, detector, contexts, config, data, std::move(out_dir));
  return pipeline.run();
}

}  // namespace emcee
