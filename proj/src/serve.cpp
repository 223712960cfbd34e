#include "emcee/serve.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <fstream>
#include <random>
#include <sstream>

#include "emcee/fewshot.hpp"
#include "emcee/prompt.hpp"
#include "emcee/rng.hpp"

namespace emcee {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string new_session_id() {
  static std::mutex mu;
  static Rng rng([] {
    std::random_device rd;
    const auto now = static_cast<std::uint64_t>(
        std::chrono::steady_clock::now().time_since_epoch().count());
    return splitmix64((static_cast<std::uint64_t>(rd()) << 32 | rd()) ^ now);
  }());
  std::lock_guard lock(mu);
  char buf[24];
  std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(rng.next()));
  return buf;
}

std::string_view to_string(SessionStatus s) { return s == SessionStatus::open ? "open" : "closed"; }

}  // namespace

SessionStore::SessionStore(fs::path data_dir) : data_dir_(std::move(data_dir)) {
  const fs::path root = data_dir_ / "sessions";
  fs::create_directories(root);
  std::vector<fs::path> files;
  for (const auto& day : fs::directory_iterator(root)) {
    if (!day.is_directory()) continue;
    for (const auto& f : fs::directory_iterator(day.path())) {
      if (f.is_regular_file() && f.path().extension() == ".jsonl") files.push_back(f.path());
    }
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) replay(f);
}

void SessionStore::replay(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  Entry e;
  e.file = file;
  e.busy = std::make_shared<std::mutex>();
  bool have_header = false;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    // A final line without its newline is a write that never completed.
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    ++line_no;
    if (is_blank(line)) continue;
    json ev;
    try {
      ev = json::parse(line);
      const auto kind = ev.at("event").get<std::string>();
      if (kind == "session") {
        auto& s = e.session;
        s.id = ev.at("id").get<std::string>();
        s.context_ref = ev.at("context_ref").get<std::string>();
        s.backend_version = ev.at("backend_version").get<std::uint64_t>();
        s.created_at = ev.at("created_at").get<std::string>();
        s.transcript.id = s.id;
        s.transcript.context_ref = s.context_ref;
        have_header = true;
      } else if (!have_header) {
        throw ParseError(file.string(), line_no, "event before the session header");
      } else if (kind == "turn") {
        e.session.transcript.turns.push_back(
            {role_from_string(ev.at("role").get<std::string>()), ev.at("text").get<std::string>(), {}});
      } else if (kind == "closed") {
        e.session.status = SessionStatus::closed;
      } else {
        throw ParseError(file.string(), line_no, "unknown event '" + kind + "'");
      }
    } catch (const json::exception& ex) {
      throw ParseError(file.string(), line_no, ex.what());
    }
  }
  if (!have_header) throw ParseError(file.string(), 1, "missing session header");
  // Drop the torn tail so later appends start on a fresh line.
  if (pos < text.size()) fs::resize_file(file, pos);
  const std::string id = e.session.id;
  sessions_.emplace(id, std::move(e));
}

SessionStore::Entry& SessionStore::entry(const std::string& id) {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

const SessionStore::Entry& SessionStore::entry(const std::string& id) const {
  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

void SessionStore::append_line(const fs::path& file, const json& event) {
  std::ofstream out(file, std::ios::binary | std::ios::app);
  if (!out) throw Error("cannot open transcript " + file.string());
  out << event.dump() << '\n';
  out.flush();
  if (!out) throw Error("cannot write transcript " + file.string());
}

Session SessionStore::create(const std::string& context_ref, std::uint64_t backend_version) {
  Entry e;
  e.busy = std::make_shared<std::mutex>();
  auto& s = e.session;
  s.id = new_session_id();
  s.context_ref = context_ref;
  s.backend_version = backend_version;
  s.created_at = utc_now();
  s.transcript.id = s.id;
  s.transcript.context_ref = context_ref;

  const fs::path dir = data_dir_ / "sessions" / s.created_at.substr(0, 10);
  fs::create_directories(dir);
  e.file = dir / (s.id + ".jsonl");
  append_line(e.file, {{"event", "session"},
                       {"id", s.id},
                       {"context_ref", s.context_ref},
                       {"backend_version", s.backend_version},
                       {"created_at", s.created_at}});
  std::lock_guard lock(mu_);
  Session out = s;
  sessions_.emplace(s.id, std::move(e));
  return out;
}

Session SessionStore::get(const std::string& id) const {
  std::lock_guard lock(mu_);
  return entry(id).session;
}

void SessionStore::append_turn(const std::string& id, const Turn& turn) {
  turn.validate();
  fs::path file;
  {
    std::lock_guard lock(mu_);
    auto& e = entry(id);
    auto next = e.session.transcript;
    next.turns.push_back({turn.role, turn.text, {}});
    next.validate();
    file = e.file;
  }
  append_line(file, {{"event", "turn"}, {"role", to_string(turn.role)}, {"text", turn.text}});
  std::lock_guard lock(mu_);
  entry(id).session.transcript.turns.push_back({turn.role, turn.text, {}});
}

void SessionStore::close(const std::string& id) {
  fs::path file;
  {
    std::lock_guard lock(mu_);
    auto& e = entry(id);
    if (e.session.status == SessionStatus::closed) return;
    file = e.file;
  }
  append_line(file, {{"event", "closed"}});
  std::lock_guard lock(mu_);
  entry(id).session.status = SessionStatus::closed;
}

std::vector<std::string> SessionStore::ids() const {
  std::lock_guard lock(mu_);
  std::vector<std::string> out;
  for (const auto& [id, e] : sessions_) out.push_back(id);
  return out;
}

std::unique_lock<std::mutex> SessionStore::lock(const std::string& id) const {
  std::shared_ptr<std::mutex> busy;
  {
    std::lock_guard lock(mu_);
    busy = entry(id).busy;
  }
  // The entry is never erased, so the mutex outlives the returned lock.
  return std::unique_lock<std::mutex>(*busy);
}

ConversationService::ConversationService(const Backend& backend, const ContextRegistry& contexts,
                                         fs::path data_dir, ServeOptions options)
    : backend_(backend),
      contexts_(contexts),
      options_(std::move(options)),
      store_(std::move(data_dir)) {
  options_.sampler.validate();
  if (options_.demonstrations.size() > kMaxDemonstrations) {
    throw ConfigError("serving takes at most three demonstrations");
  }
}

json ConversationService::list_contexts() const {
  json out = json::array();
  for (const auto& c : contexts_.contexts()) {
    out.push_back({{"id", c.id},
                   {"xai_method", to_string(c.xai_method)},
                   {"task_description", c.task_description},
                   {"model_description", c.model_description},
                   {"input_image", "/contexts/" + c.id + "/input_image"},
                   {"model_output", c.model_output},
                   {"explanation_image", "/contexts/" + c.id + "/explanation_image"},
                   {"explanation_description", c.explanation_description}});
  }
  return out;
}

Session ConversationService::create_session(const std::string& context_id) {
  contexts_.at(context_id);
  return store_.create(context_id, backend_.version());
}

std::string ConversationService::post_message(const std::string& session_id,
                                              const std::string& text) {
  if (is_blank(text)) throw ValidationError("message text is empty");
  auto lock = store_.lock(session_id);
  Session session = store_.get(session_id);
  if (session.status == SessionStatus::closed) {
    throw ConflictError("session " + session_id + " is closed");
  }
  auto& turns = session.transcript.turns;
  if (!turns.empty() && turns.back().role == Role::human) {
    // An earlier reply failed; only the same message may be retried.
    if (turns.back().text != text) {
      throw ConflictError("session " + session_id + " has an unanswered message");
    }
  } else {
    const Turn human{Role::human, text, {}};
    store_.append_turn(session_id, human);
    turns.push_back(human);
  }

  PromptSpec spec;
  spec.instruction = options_.instruction;
  spec.context = contexts_.at(session.context_ref);
  spec.demonstrations = options_.demonstrations;
  spec.history = turns;
  spec.next_role = Role::machine;
  Rng rng(derive_seed(options_.seed, std::hash<std::string>{}(session_id), turns.size()));
  const std::string reply = generate_reply(backend_, assemble_prompt(spec), options_.sampler,
                                           options_.top_k, options_.max_reply_tokens, rng);
  if (is_blank(reply)) throw BackendError("backend produced an empty reply");
  store_.append_turn(session_id, {Role::machine, reply, {}});
  return reply;
}

Conversation ConversationService::get_transcript(const std::string& session_id) const {
  const Session s = store_.get(session_id);
  Conversation c = s.transcript;
  c.meta["created_at"] = s.created_at;
  c.meta["backend_version"] = std::to_string(s.backend_version);
  c.meta["status"] = std::string(to_string(s.status));
  return c;
}

Session ConversationService::get_session(const std::string& session_id) const {
  return store_.get(session_id);
}

void ConversationService::close_session(const std::string& session_id) {
  auto lock = store_.lock(session_id);
  store_.close(session_id);
}

}  // namespace emcee
