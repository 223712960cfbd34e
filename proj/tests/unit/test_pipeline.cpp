#include <fstream>
#include <set>

#include "doctest.h"
#include "emcee/config.hpp"
#include "emcee/echo_backend.hpp"
#include "emcee/fewshot.hpp"
#include "emcee/hash.hpp"
#include "emcee/pipeline.hpp"
#include "emcee/toy_backend.hpp"
#include "support/fixtures.hpp"

using namespace emcee;
using namespace emcee::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

PipelineConfig small_config(std::size_t n, int rounds, std::uint64_t seed = 3) {
  auto c = desk_config();
  c.conversations_per_round = n;
  c.quota = even_quota(n);
  c.rounds = rounds;
  c.seed = seed;
  c.max_pairs = 4;
  c.max_turn_tokens = 24;
  return c;
}

std::map<std::string, std::size_t> per_method(const Dataset& d, const ContextRegistry& contexts) {
  std::map<std::string, std::size_t> out;
  for (const auto& c : d.conversations) {
    ++out[std::string(to_string(contexts.at(c.context_ref).xai_method))];
  }
  return out;
}

// Flags exactly the listed machine-turn texts.
class TextSetDetector final : public Detector {
 public:
  explicit TextSetDetector(std::set<std::string> texts) : texts_(std::move(texts)) {}
  DetectorVerdict classify(std::string_view text) const override {
    return {texts_.contains(std::string(text)), 1.0};
  }

 private:
  std::set<std::string> texts_;
};

class FlagEverything final : public Detector {
 public:
  DetectorVerdict classify(std::string_view) const override { return {true, 1.0}; }
};

std::vector<fs::path> round_dirs(const fs::path& out) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(out)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());
  return dirs;
}

}  // namespace

TEST_CASE("pipeline config validation and quota arithmetic") {
  CHECK(even_quota(8) == std::map<XaiMethod, std::size_t>{{XaiMethod::lime, 2},
                                                          {XaiMethod::grad_cam, 2},
                                                          {XaiMethod::integrated_gradients, 2},
                                                          {XaiMethod::shap, 2}});
  CHECK(even_quota(6).at(XaiMethod::lime) == 2);
  CHECK(even_quota(6).at(XaiMethod::shap) == 1);

  const PipelineConfig defaults;
  CHECK(defaults.conversations_per_round == 2000);
  CHECK(defaults.rounds == 5);
  for (XaiMethod m : kAllXaiMethods) CHECK(defaults.quota.at(m) == 500);
  CHECK(defaults.sampler.temperature == 1.2);
  CHECK(defaults.sampler.penalty == 1.1);
  CHECK(defaults.epochs_per_round == 3);
  CHECK(defaults.finetune_params.at("lora_rank") == 128);
  CHECK(defaults.finetune_params.at("learning_rate") == 2e-4);
  CHECK_NOTHROW(defaults.validate());

  auto bad = small_config(8, 1);
  bad.quota[XaiMethod::lime] = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  auto zero = small_config(8, 1);
  zero.rounds = 0;
  CHECK_THROWS_AS(zero.validate(), ConfigError);
}

TEST_CASE("config JSON round trip and ablations") {
  auto c = small_config(12, 4, 99);
  c.sampler = {0.9, 2.5};
  c.filter_policy.granularity = Granularity::whole_turn;
  c.demo_policy = DemoPolicy::one;
  const auto j = pipeline_config_to_json(c);
  const auto back = pipeline_config_from_json(j);
  CHECK(pipeline_config_to_json(back) == j);
  CHECK(back.seed == 99);
  CHECK(back.sampler.penalty == 2.5);

  const auto partial = pipeline_config_from_json(json{{"conversations_per_round", 6}});
  CHECK(partial.quota == even_quota(6));
  CHECK_THROWS_AS(pipeline_config_from_json(json{{"rounds", "five"}}), ConfigError);

  CHECK(apply_ablation(c, Ablation::no_multiround).rounds == 1);
  CHECK(apply_ablation(c, Ablation::no_penalty).sampler.penalty == 0.0);
  CHECK_FALSE(apply_ablation(c, Ablation::no_filter).filtering);
  CHECK(ablation_from_string("no-penalty") == Ablation::no_penalty);
  CHECK_THROWS_AS(ablation_from_string("no-everything"), ConfigError);
}

TEST_CASE("shipped desk config loads with resolved paths") {
  const auto rc = load_run_config(source_path("configs/desk.json"));
  CHECK(rc.pipeline.conversations_per_round == 20);
  CHECK(rc.pipeline.rounds == 3);
  CHECK(fs::exists(rc.contexts));
  CHECK(fs::exists(rc.backend.seed_corpus));
  CHECK(fs::exists(rc.human_corpus));
  CHECK(fs::exists(rc.detector.table));
  const auto full = load_run_config(source_path("configs/full_scale.json"));
  CHECK(full.pipeline.conversations_per_round == 2000);
  CHECK(full.pipeline.rounds == 5);
  CHECK(full.pipeline.epochs_per_round == 3);
}

TEST_CASE("generate_round honours quotas and is deterministic") {
  const auto contexts = shipped_contexts();
  const auto backend = desk_toy_backend();
  const auto config = small_config(8, 1);
  const auto d = generate_round(*backend, config, contexts, 1);
  CHECK(d.size() == 8);
  CHECK_NOTHROW(d.validate());
  for (const auto& [method, count] : per_method(d, contexts)) CHECK(count == 2);
  for (const auto& c : d.conversations) {
    CHECK(c.round == 1);
    CHECK(c.pair_count() >= 1);
    CHECK(c.pair_count() <= config.max_pairs);
  }
  CHECK(dataset_to_jsonl(generate_round(*backend, config, contexts, 1)) == dataset_to_jsonl(d));
  CHECK(dataset_to_jsonl(generate_round(*backend, config, contexts, 2)) != dataset_to_jsonl(d));

  auto other_seed = config;
  other_seed.seed = 4;
  CHECK(dataset_to_jsonl(generate_round(*backend, other_seed, contexts, 1)) != dataset_to_jsonl(d));

  auto uneven = small_config(7, 1);
  const auto e = generate_round(*backend, uneven, contexts, 1);
  const auto counts = per_method(e, contexts);
  CHECK(counts.at("LIME") == 2);
  CHECK(counts.at("SHAP") == 1);
}

TEST_CASE("generate_round parallel mode and missing contexts") {
  const auto contexts = shipped_contexts();
  const auto backend = desk_toy_backend();
  auto config = small_config(8, 1);
  config.generation_mode = GenerationMode::parallel;
  config.generation_workers = 3;
  const auto a = generate_round(*backend, config, contexts, 1);
  CHECK(a.size() == 8);
  CHECK(dataset_to_jsonl(generate_round(*backend, config, contexts, 1)) == dataset_to_jsonl(a));

  std::vector<ExplanationContext> only_lime = {contexts.at("lime-goldfish")};
  CHECK_THROWS_AS(generate_round(*backend, small_config(8, 1), ContextRegistry(only_lime), 1), ConfigError);
}

TEST_CASE("generated turns never contain reserved markup") {
  const auto contexts = shipped_contexts();
  const auto backend = desk_toy_backend();
  for (double theta : {0.0, 1.1, 5.0}) {
    auto config = small_config(8, 1);
    config.sampler.penalty = theta;
    const auto text = dataset_to_jsonl(generate_round(*backend, config, contexts, 1));
    CHECK(text.find("<bos>") == std::string::npos);
    CHECK(text.find("<unk>") == std::string::npos);
  }
}

TEST_CASE("demonstration policies") {
  const auto contexts = shipped_contexts();
  const auto backend = desk_toy_backend();
  const auto human = load_dataset(source_path("data/sample_conversations.jsonl"));
  std::vector<Conversation> demos;
  std::set<std::string> seen;
  for (const auto& c : human.conversations) {
    if (seen.insert(c.context_ref).second) demos.push_back(c);
  }
  auto config = small_config(12, 1);
  config.demo_policy = DemoPolicy::one;
  for (const auto& c : generate_round(*backend, config, contexts, 1, demos).conversations) {
    const auto& demo_id = c.meta.at("demonstration");
    REQUIRE_FALSE(demo_id.empty());
    const auto it = std::find_if(demos.begin(), demos.end(), [&](const Conversation& d) { return d.id == demo_id; });
    REQUIRE(it != demos.end());
    CHECK(contexts.at(it->context_ref).xai_method == contexts.at(c.context_ref).xai_method);
  }
  config.demo_policy = DemoPolicy::none;
  for (const auto& c : generate_round(*backend, config, contexts, 1, demos).conversations) {
    CHECK(c.meta.at("demonstration").empty());
  }
  config.demo_policy = DemoPolicy::zero_or_one;
  config.demo_batch_size = 4;
  const auto mixed = generate_round(*backend, config, contexts, 1, demos);
  for (std::size_t b = 0; b < 3; ++b) {
    std::set<bool> used;
    for (std::size_t i = 4 * b; i < 4 * b + 4; ++i) used.insert(!mixed.conversations[i].meta.at("demonstration").empty());
    CHECK(used.size() == 1);
  }
}

TEST_CASE("run_round filters, finetunes once and isolates the round") {
  const auto contexts = shipped_contexts();

  SUBCASE("nothing flagged keeps every conversation") {
    auto toy = desk_toy_backend();
    RecordingBackend backend(*toy);
    const auto config = small_config(10, 1);
    const PassThroughDetector detector;
    Pipeline pipeline(backend, detector, contexts, config);
    const auto state = pipeline.run_round(1);
    CHECK(state.clean.size() == 10);
    CHECK(state.version_after == state.version_before + 1);
    REQUIRE(backend.finetuned.size() == 1);
    CHECK(backend.finetuned[0].size() == 10);
  }
  SUBCASE("a detector flagging three single-pair conversations leaves seven") {
    auto toy = desk_toy_backend();
    auto config = small_config(10, 1);
    config.max_pairs = 1;
    const auto planned = generate_round(*toy, config, contexts, 1);
    // Pick three conversations whose reply text occurs nowhere else.
    std::map<std::string, int> uses;
    for (const auto& c : planned.conversations) ++uses[c.turns[1].text];
    std::set<std::string> flagged;
    for (const auto& c : planned.conversations) {
      if (flagged.size() < 3 && uses[c.turns[1].text] == 1 && split_sentences(c.turns[1].text).size() == 1) {
        flagged.insert(c.turns[1].text);
      }
    }
    REQUIRE(flagged.size() == 3);
    RecordingBackend backend(*toy);
    config.filter_policy.granularity = Granularity::whole_turn;
    const TextSetDetector detector(flagged);
    Pipeline pipeline(backend, detector, contexts, config);
    const auto state = pipeline.run_round(1);
    CHECK(state.generated.size() == 10);
    CHECK(state.clean.size() == 7);
    CHECK(state.filter.pairs_removed == 3);
    REQUIRE(backend.finetuned.size() == 1);
    CHECK(backend.finetuned[0] == state.clean);
  }
  SUBCASE("an empty clean set aborts without finetuning") {
    auto toy = desk_toy_backend();
    RecordingBackend backend(*toy);
    TempDir out;
    const FlagEverything detector;
    Pipeline pipeline(backend, detector, contexts, small_config(4, 3), {}, out.path());
    CHECK_THROWS_AS(pipeline.run_round(1), RoundAborted);
    CHECK(backend.finetuned.empty());
    CHECK(backend.version() == 1);

    const auto report = Pipeline(backend, detector, contexts, small_config(4, 3), {}, out.path()).run();
    CHECK(report.rounds.empty());
    REQUIRE(report.aborted);
    CHECK(report.aborted->find("round 1") != std::string::npos);
    CHECK(read_file(out / "audit.jsonl").empty());
    CHECK(json::parse(read_file(out / "report.json")).at("aborted").is_string());
  }
}

TEST_CASE("run_pipeline artifacts") {
  const auto contexts = shipped_contexts();

  SUBCASE("one round writes one directory") {
    auto backend = desk_toy_backend();
    TempDir out;
    const auto report = run_pipeline(*backend, PassThroughDetector{}, contexts, small_config(6, 1), {}, out.path());
    CHECK(report.rounds.size() == 1);
    CHECK(round_dirs(out.path()).size() == 1);
    const auto doc = json::parse(read_file(out / "report.json"));
    CHECK(doc.at("series").at("distinct2").size() == 1);
    CHECK(doc.at("config").at("rounds") == 1);
  }
  SUBCASE("three rounds are isolated, audited and reproducible") {
    auto toy = desk_toy_backend();
    RecordingBackend backend(*toy);
    TempDir out;
    const auto report = run_pipeline(backend, PassThroughDetector{}, contexts, small_config(6, 3), {}, out.path());
    REQUIRE(report.rounds.size() == 3);
    REQUIRE(backend.finetuned.size() == 3);
    std::vector<std::string> audit_lines;
    {
      std::ifstream in(out / "audit.jsonl");
      for (std::string line; std::getline(in, line);) audit_lines.push_back(line);
    }
    REQUIRE(audit_lines.size() == 3);
    for (int r = 1; r <= 3; ++r) {
      const auto& summary = report.rounds[static_cast<std::size_t>(r - 1)];
      CHECK(summary.version_after == summary.version_before + 1);
      CHECK(summary.version_before == static_cast<std::uint64_t>(r));
      for (const auto& c : backend.finetuned[static_cast<std::size_t>(r - 1)].conversations) CHECK(c.round == r);
      const auto audit = json::parse(audit_lines[static_cast<std::size_t>(r - 1)]);
      CHECK(audit.at("round") == r);
      CHECK(audit.at("conversation_rounds") == json::array({r}));
      const auto dir = out / summary.directory;
      CHECK(audit.at("dataset_sha256") == sha256_hex(read_file(dir / "clean.jsonl")));
      CHECK(sha256_hex(dataset_to_jsonl(backend.finetuned[static_cast<std::size_t>(r - 1)])) ==
            audit.at("dataset_sha256"));
      CHECK(summary.directory.substr(0, 21) ==
            "round-0" + std::to_string(r) + "-" + sha256_hex(read_file(dir / "generated.jsonl")).substr(0, 12));
      CHECK(fs::exists(dir / summary.checkpoint));
      CHECK(fs::exists(dir / "filter_report.json"));
      CHECK(fs::exists(dir / "metrics.json"));
      CHECK(json::parse(read_file(dir / "finetune_audit.json")) == audit);
    }
    const auto doc = json::parse(read_file(out / "report.json"));
    CHECK(doc.at("series").at("distinct2").size() == 3);

    auto toy2 = desk_toy_backend();
    TempDir again;
    run_pipeline(*toy2, PassThroughDetector{}, contexts, small_config(6, 3), {}, again.path());
    for (const auto& entry : fs::recursive_directory_iterator(out.path())) {
      if (!entry.is_regular_file()) continue;
      const auto rel = fs::relative(entry.path(), out.path());
      CHECK(read_file(entry.path()) == read_file(again.path() / rel));
    }
  }
  SUBCASE("desk configuration emits three distinct-2 values") {
    auto backend = desk_toy_backend();
    const auto table = hallucination_table();
    RuleDetector detector(table);
    const auto human = load_dataset(source_path("data/sample_conversations.jsonl"));
    PipelineData data;
    data.eval_demos = {human.conversations[0]};
    data.val = {human.conversations[1], human.conversations[2]};
    auto config = desk_config();
    config.eval.validation_shots = 1;
    const auto report = run_pipeline(*backend, detector, contexts, config, data);
    REQUIRE(report.rounds.size() == 3);
    const auto doc = report.to_json();
    CHECK(doc.at("series").at("distinct2").size() == 3);
    for (const auto& v : doc.at("series").at("distinct2")) {
      CHECK(v.get<double>() > 0.0);
      CHECK(v.get<double>() <= 1.0);
    }
    for (const auto& r : report.rounds) {
      REQUIRE(r.metrics.val);
      CHECK(r.metrics.val->n_items > 0);
      CHECK(r.metrics.clean <= r.metrics.generated);
    }
  }
  SUBCASE("the no-filter ablation ignores the detector") {
    auto backend = desk_toy_backend();
    const auto config = apply_ablation(small_config(4, 1), Ablation::no_filter);
    const auto report = run_pipeline(*backend, FlagEverything{}, contexts, config);
    REQUIRE(report.rounds.size() == 1);
    CHECK(report.rounds[0].metrics.clean == 4);
  }
}

TEST_CASE("few-shot evaluation harness") {
  const auto contexts = shipped_contexts();
  const auto human = load_dataset(source_path("data/sample_conversations.jsonl"));
  const std::vector<Conversation> demos(human.conversations.begin(), human.conversations.begin() + 3);
  const std::vector<Conversation> test(human.conversations.begin() + 3, human.conversations.end());
  const auto backend = desk_toy_backend();
  const int ks[] = {0, 1, 2, 3};
  const auto rows = evaluate_fewshot(*backend, contexts, demos, test, ks);
  REQUIRE(rows.size() == 4);
  std::size_t expected_items = 0;
  for (const auto& c : test) expected_items += c.pair_count();
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(rows[i].shots == static_cast<int>(i));
    CHECK(rows[i].report.n_items == expected_items);
    for (double v : rows[i].report.columns()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  const auto table = format_fewshot_table(rows);
  CHECK(std::count(table.begin(), table.end(), '\n') == 5);
  CHECK(table.rfind("Shot Num", 0) == 0);
  CHECK(fewshot_to_json(rows).size() == 4);
  CHECK(evaluate_fewshot(*backend, contexts, demos, test, ks) .at(2).report.columns() == rows[2].report.columns());

  const std::vector<Conversation> one = {make_conversation("t", "ig-volcano", {{"why blue?", "the baseline."}})};
  const int zero[] = {0};
  CHECK(evaluate_fewshot(*backend, contexts, demos, one, zero).at(0).report.n_items == 1);

  const int four[] = {4};
  CHECK_THROWS_AS(evaluate_fewshot(*backend, contexts, demos, test, four), ConfigError);
  const int three[] = {3};
  CHECK_THROWS_AS(evaluate_fewshot(*backend, contexts, std::span(demos).first(2), test, three), ConfigError);
}
