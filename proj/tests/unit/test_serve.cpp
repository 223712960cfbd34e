#include <atomic>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "emcee/echo_backend.hpp"
#include "emcee/metrics.hpp"
#include "emcee/serve.hpp"
#include "httplib.h"
#include "support/fixtures.hpp"

using namespace emcee;
using namespace emcee::testing;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

Vocabulary echo_vocab() {
  const std::vector<std::string> texts = {
      "user assistant : why is the fin highlighted ? what does red mean . and the tail"};
  return Vocabulary::from_texts(texts);
}

// Echo backend that can be told to fail.
class Switchable final : public Backend {
 public:
  Switchable() : inner_(echo_vocab(), EchoBackend::repeat_last_user()) {}
  BackendKind kind() const override { return inner_.kind(); }
  const Vocabulary& vocab() const override { return inner_.vocab(); }
  std::uint64_t version() const override { return inner_.version(); }
  LogitVector logits(std::span<const TokenId> prefix) const override {
    if (failing) throw BackendError("model server unavailable", true, 3);
    return inner_.logits(prefix);
  }
  std::uint64_t finetune(const Dataset& d, int e) override { return inner_.finetune(d, e); }
  std::string save_checkpoint(const fs::path& dir) const override { return inner_.save_checkpoint(dir); }

  std::atomic<bool> failing{false};

 private:
  EchoBackend inner_;
};

const char* kQuestions[] = {"Why is the fin highlighted?", "What does red mean?", "And the tail?"};

// HttpServer on a free port, served from a background thread.
struct LiveServer {
  explicit LiveServer(ConversationService& service) : http(service) {
    port = http.bind("127.0.0.1", 0);
    thread = std::thread([this] { http.serve(); });
    httplib::Client probe("127.0.0.1", port);
    for (int i = 0; i < 100 && !probe.Get("/healthz"); ++i) std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  ~LiveServer() {
    http.stop();
    thread.join();
  }
  httplib::Client client() const { return httplib::Client("127.0.0.1", port); }

  HttpServer http;
  int port = 0;
  std::thread thread;
};

}  // namespace

TEST_CASE("conversation service round trip survives a restart") {
  const auto contexts = shipped_contexts();
  Switchable backend;
  TempDir data;
  std::string id;
  json before;
  {
    ConversationService service(backend, contexts, data.path());
    const auto session = service.create_session("gradcam-tabby");
    id = session.id;
    CHECK(session.backend_version == 1);
    CHECK(session.created_at.size() == 20);
    for (const char* q : kQuestions) {
      const auto reply = service.post_message(id, q);
      CHECK(reply == join_tokens(tokenize(q)));
    }
    const auto t = service.get_transcript(id);
    REQUIRE(t.turns.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) CHECK(t.turns[i].role == (i % 2 ? Role::machine : Role::human));
    CHECK(t.turns[0].text == kQuestions[0]);
    CHECK(t.context_ref == "gradcam-tabby");
    CHECK(t.meta.at("status") == "open");
    CHECK_NOTHROW(t.validate());
    before = conversation_to_json(t);
  }
  ConversationService restarted(backend, contexts, data.path());
  CHECK(conversation_to_json(restarted.get_transcript(id)) == before);
  CHECK(restarted.post_message(id, "and the tail?") == "and the tail?");
  CHECK(restarted.get_transcript(id).turns.size() == 8);
}

TEST_CASE("conversation service errors and pending turns") {
  const auto contexts = shipped_contexts();
  Switchable backend;
  TempDir data;
  ConversationService service(backend, contexts, data.path());
  CHECK_THROWS_AS(service.create_session("no-such-context"), NotFoundError);
  CHECK_THROWS_AS(service.post_message("s0000", "hi"), NotFoundError);

  const auto id = service.create_session("lime-goldfish").id;
  CHECK_THROWS_AS(service.post_message(id, "   "), ValidationError);

  backend.failing = true;
  CHECK_THROWS_AS(service.post_message(id, kQuestions[0]), BackendError);
  CHECK(service.get_transcript(id).turns.size() == 1);
  CHECK_THROWS_AS(service.post_message(id, kQuestions[1]), ConflictError);
  backend.failing = false;
  CHECK(service.post_message(id, kQuestions[0]) == "why is the fin highlighted?");
  CHECK(service.get_transcript(id).turns.size() == 2);

  service.close_session(id);
  CHECK(service.get_session(id).status == SessionStatus::closed);
  CHECK_THROWS_AS(service.post_message(id, kQuestions[1]), ConflictError);
  ConversationService restarted(backend, contexts, data.path());
  CHECK(restarted.get_transcript(id).meta.at("status") == "closed");
}

TEST_CASE("blank generated replies are backend errors") {
  const auto contexts = shipped_contexts();
  EchoBackend silent(echo_vocab(), [](const std::string&) { return std::string(); });
  TempDir data;
  ConversationService service(silent, contexts, data.path());
  const auto id = service.create_session("ig-volcano").id;
  CHECK_THROWS_AS(service.post_message(id, "why?"), BackendError);
}

TEST_CASE("session store replay ignores a torn final line") {
  const auto contexts = shipped_contexts();
  Switchable backend;
  TempDir data;
  std::string id;
  {
    ConversationService service(backend, contexts, data.path());
    id = service.create_session("shap-espresso").id;
    service.post_message(id, kQuestions[0]);
  }
  fs::path file;
  for (const auto& e : fs::recursive_directory_iterator(data.path())) {
    if (e.is_regular_file()) file = e.path();
  }
  REQUIRE(file.filename() == id + ".jsonl");
  CHECK(file.parent_path().filename().string().size() == 10);
  std::ofstream(file, std::ios::app) << R"({"event":"turn","role":"hum)";

  ConversationService restarted(backend, contexts, data.path());
  CHECK(restarted.get_transcript(id).turns.size() == 2);
  restarted.post_message(id, kQuestions[1]);
  ConversationService again(backend, contexts, data.path());
  CHECK(again.get_transcript(id).turns.size() == 4);

  std::ofstream(file, std::ios::app) << "{\"event\":\"bogus\"}\n";
  CHECK_THROWS_AS(ConversationService(backend, contexts, data.path()), ParseError);
}

TEST_CASE("HTTP API") {
  const auto contexts = shipped_contexts();
  Switchable backend;
  TempDir data;
  ConversationService service(backend, contexts, data.path());
  LiveServer server(service);
  auto client = server.client();

  auto health = client.Get("/healthz");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  auto listed = client.Get("/contexts");
  REQUIRE(listed);
  const auto list = json::parse(listed->body);
  REQUIRE(list.size() == 4);
  std::set<std::string> methods;
  for (const auto& c : list) {
    methods.insert(c.at("xai_method").get<std::string>());
    for (const char* field : {"task_description", "model_description", "input_image", "model_output",
                              "explanation_image", "explanation_description"}) {
      CHECK_FALSE(c.at(field).get<std::string>().empty());
    }
    auto image = client.Get(c.at("explanation_image").get<std::string>());
    REQUIRE(image);
    CHECK(image->status == 200);
    CHECK(image->get_header_value("Content-Type") == "image/svg+xml");
    CHECK(image->body.find("<svg") != std::string::npos);
  }
  CHECK(methods == std::set<std::string>{"LIME", "GradCAM", "IntegratedGradients", "SHAP"});
  CHECK(client.Get("/contexts/nope/input_image")->status == 404);

  auto created = client.Post("/sessions", R"({"context_id":"lime-goldfish"})", "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const auto id = json::parse(created->body).at("session_id").get<std::string>();

  for (const char* q : kQuestions) {
    auto r = client.Post("/sessions/" + id + "/messages", json{{"text", q}}.dump(), "application/json");
    REQUIRE(r);
    CHECK(r->status == 200);
    CHECK(json::parse(r->body).at("reply") == join_tokens(tokenize(q)));
  }
  auto got = client.Get("/sessions/" + id);
  REQUIRE(got);
  CHECK(got->status == 200);
  const auto body = json::parse(got->body);
  // The transcript is a dataset record: it parses and validates as one.
  const auto conversation = conversation_from_json(body);
  CHECK(conversation.turns.size() == 6);
  CHECK_NOTHROW(conversation.validate());
  CHECK(body == conversation_to_json(service.get_transcript(id)));
  CHECK(dataset_from_jsonl(body.dump() + "\n").size() == 1);

  CHECK(client.Post("/sessions/" + id + "/messages", R"({"text":""})", "application/json")->status == 400);
  CHECK(client.Post("/sessions/" + id + "/messages", "not json", "application/json")->status == 400);
  CHECK(client.Post("/sessions", R"({"context_id":"unknown"})", "application/json")->status == 404);
  CHECK(client.Get("/sessions/s-missing")->status == 404);

  backend.failing = true;
  CHECK(client.Post("/sessions/" + id + "/messages", R"({"text":"why?"})", "application/json")->status == 502);
  CHECK(client.Post("/sessions/" + id + "/messages", R"({"text":"other?"})", "application/json")->status == 409);
  backend.failing = false;

  CHECK(client.Post("/sessions/" + id + "/close", "", "application/json")->status == 200);
  CHECK(client.Post("/sessions/" + id + "/messages", R"({"text":"why?"})", "application/json")->status == 409);

  auto preflight = client.Options("/sessions");
  REQUIRE(preflight);
  CHECK(preflight->status == 204);
  CHECK(preflight->get_header_value("Access-Control-Allow-Methods").find("POST") != std::string::npos);
}
