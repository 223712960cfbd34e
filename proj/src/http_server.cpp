#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "emcee/serve.hpp"
#include "httplib.h"

namespace emcee {

using nlohmann::json;

namespace {

std::string content_type_for(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".svg") return "image/svg+xml";
  if (ext == ".png") return "image/png";
  if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
  if (ext == ".gif") return "image/gif";
  if (ext == ".webp") return "image/webp";
  return "application/octet-stream";
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  try {
    auto j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

std::string string_field(const json& body, const char* key) {
  if (!body.contains(key) || !body.at(key).is_string()) {
    throw ValidationError(std::string("missing string field '") + key + "'");
  }
  return body.at(key).get<std::string>();
}

// Maps library errors to HTTP statuses.
template <typename F>
void guarded(httplib::Response& res, F&& handler) {
  try {
    handler();
  } catch (const NotFoundError& e) {
    send_json(res, 404, {{"error", e.what()}});
  } catch (const ValidationError& e) {
    send_json(res, 400, {{"error", e.what()}});
  } catch (const ContextError& e) {
    send_json(res, 400, {{"error", e.what()}});
  } catch (const ConflictError& e) {
    send_json(res, 409, {{"error", e.what()}});
  } catch (const BackendError& e) {
    send_json(res, 502, {{"error", e.what()}});
  } catch (const GenerationError& e) {
    send_json(res, 502, {{"error", e.what()}});
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

}  // namespace

struct HttpServer::Impl {
  ConversationService& service;
  HttpOptions options;
  httplib::Server server;

  Impl(ConversationService& s, HttpOptions o) : service(s), options(std::move(o)) { routes(); }

  void serve_asset(const httplib::Request& req, httplib::Response& res, bool explanation) {
    guarded(res, [&] {
      const auto& ctx = service.contexts().at(req.matches[1].str());
      const std::string& ref = explanation ? ctx.explanation_image : ctx.input_image;
      if (is_uri(ref)) {
        res.set_redirect(ref);
        return;
      }
      std::ifstream in(ref, std::ios::binary);
      if (!in) throw NotFoundError("asset missing for context " + ctx.id);
      std::stringstream buf;
      buf << in.rdbuf();
      res.status = 200;
      res.set_content(buf.str(), content_type_for(ref).c_str());
    });
  }

  void routes() {
    server.set_default_headers({{"Access-Control-Allow-Origin", options.cors_origin},
                                {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                                {"Access-Control-Allow-Headers", "Content-Type"}});
    server.Options(".*", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

    server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}});
    });
    server.Get("/contexts", [this](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, service.list_contexts()); });
    });
    server.Get(R"(/contexts/([^/]+)/input_image)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 serve_asset(req, res, false);
               });
    server.Get(R"(/contexts/([^/]+)/explanation_image)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 serve_asset(req, res, true);
               });
    server.Post("/sessions", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const auto body = parse_body(req);
        const auto session = service.create_session(string_field(body, "context_id"));
        send_json(res, 201, {{"session_id", session.id}});
      });
    });
    server.Post(R"(/sessions/([^/]+)/messages)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    const auto body = parse_body(req);
                    const auto reply =
                        service.post_message(req.matches[1].str(), string_field(body, "text"));
                    send_json(res, 200, {{"reply", reply}});
                  });
                });
    server.Post(R"(/sessions/([^/]+)/close)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  guarded(res, [&] {
                    service.close_session(req.matches[1].str());
                    send_json(res, 200, {{"status", "closed"}});
                  });
                });
    server.Get(R"(/sessions/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        send_json(res, 200, conversation_to_json(service.get_transcript(req.matches[1].str())));
      });
    });
  }
};

HttpServer::HttpServer(ConversationService& service, HttpOptions options)
    : impl_(std::make_unique<Impl>(service, std::move(options))) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace emcee
