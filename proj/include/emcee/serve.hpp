#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "emcee/backend.hpp"
#include "emcee/config.hpp"
#include "emcee/dataset_io.hpp"
#include "emcee/error.hpp"
#include "json.hpp"

namespace emcee {

/// A request that contradicts the session state (closed session, or a new
/// message while an earlier one is still unanswered).
class ConflictError : public Error {
 public:
  using Error::Error;
};

enum class SessionStatus { open, closed };

struct Session {
  std::string id;
  std::string context_ref;
  std::uint64_t backend_version = 0;
  Conversation transcript;  // id = session id, round 0
  std::string created_at;   // UTC, "YYYY-MM-DDTHH:MM:SSZ"
  SessionStatus status = SessionStatus::open;
};

/// Append-only transcript files, one per session:
///   <data_dir>/sessions/<YYYY-MM-DD>/<session id>.jsonl
/// The first line is {"event":"session",...}; each turn adds
/// {"event":"turn","role":...,"text":...}; closing adds {"event":"closed"}.
/// Every event is flushed before the call returns. The constructor replays
/// all files, so a restarted store serves the same transcripts.
class SessionStore {
 public:
  explicit SessionStore(std::filesystem::path data_dir);

  Session create(const std::string& context_ref, std::uint64_t backend_version);
  /// Throws NotFoundError for an unknown id.
  Session get(const std::string& id) const;
  void append_turn(const std::string& id, const Turn& turn);
  void close(const std::string& id);
  std::vector<std::string> ids() const;

  /// Exclusive per-session lock; distinct sessions do not contend.
  std::unique_lock<std::mutex> lock(const std::string& id) const;

 private:
  struct Entry {
    Session session;
    std::filesystem::path file;
    std::shared_ptr<std::mutex> busy;
  };
  Entry& entry(const std::string& id);
  const Entry& entry(const std::string& id) const;
  void append_line(const std::filesystem::path& file, const nlohmann::json& event);
  void replay(const std::filesystem::path& file);

  std::filesystem::path data_dir_;
  mutable std::mutex mu_;
  std::map<std::string, Entry> sessions_;
};

struct ServeOptions {
  std::string instruction = default_answer_instruction();
  // Greedy decoding without the repetition penalty.
  PenaltyConfig sampler{1.0, 0.0};
  std::size_t top_k = 1;
  std::size_t max_reply_tokens = 64;
  std::vector<Conversation> demonstrations;  // 0..3, shared by every session
  std::uint64_t seed = 0;
};

class ConversationService {
 public:
  ConversationService(const Backend& backend, const ContextRegistry& contexts,
                      std::filesystem::path data_dir, ServeOptions options = {});

  /// Id, method and the six display fields of every context; images point at
  /// the asset routes.
  nlohmann::json list_contexts() const;

  Session create_session(const std::string& context_id);

  /// Appends the human turn, generates and appends the reply, returns it.
  /// On a backend failure the human turn stays and no reply is stored; posting
  /// the same text again retries the reply. Throws ValidationError for blank
  /// text, ConflictError for a closed session or a different pending text.
  std::string post_message(const std::string& session_id, const std::string& text);

  /// The transcript in dataset JSONL form (meta carries created_at,
  /// backend_version and status).
  Conversation get_transcript(const std::string& session_id) const;
  Session get_session(const std::string& session_id) const;
  void close_session(const std::string& session_id);

  const ContextRegistry& contexts() const { return contexts_; }

 private:
  const Backend& backend_;
  const ContextRegistry& contexts_;
  ServeOptions options_;
  SessionStore store_;
};

struct HttpOptions {
  std::string cors_origin = "*";
};

/// JSON API over a ConversationService:
///   GET  /healthz
///   GET  /contexts
///   GET  /contexts/{id}/input_image, /contexts/{id}/explanation_image
///   POST /sessions                 {"context_id"}  -> {"session_id"}
///   POST /sessions/{id}/messages   {"text"}        -> {"reply"}
///   GET  /sessions/{id}                            -> conversation JSON
///   POST /sessions/{id}/close
/// Errors come back as {"error": message} with 400, 404, 409 or 502.
class HttpServer {
 public:
  HttpServer(ConversationService& service, HttpOptions options = {});
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Binds `host`; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  /// Serves until stop(); call after bind().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace emcee
