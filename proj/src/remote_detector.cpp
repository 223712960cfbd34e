#include <thread>

#include "emcee/detector.hpp"
#include "emcee/error.hpp"
#include "httplib.h"

namespace emcee {

RemoteDetector::RemoteDetector(std::string base_url, double threshold, int max_attempts,
                               std::chrono::seconds timeout)
    : base_url_(std::move(base_url)), threshold_(threshold), max_attempts_(max_attempts),
      timeout_(timeout) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("detector threshold must be in [0, 1]");
  if (max_attempts < 1) throw ConfigError("detector max_attempts must be >= 1");
}

DetectorVerdict RemoteDetector::classify(std::string_view text) const {
  const std::string body = nlohmann::json{{"text", std::string(text)}}.dump();
  std::string last_error;
  for (int attempt = 1; attempt <= max_attempts_; ++attempt) {
    httplib::Client client(base_url_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    auto res = client.Post("/v1/classify", body, "application/json");
    if (res && res->status == 200) {
      double p = 0;
      try {
        p = nlohmann::json::parse(res->body).at("p_hallucination").get<double>();
      } catch (const nlohmann::json::exception& e) {
        throw DetectorError(std::string("malformed classifier reply: ") + e.what());
      }
      if (!(p >= 0.0 && p <= 1.0)) throw DetectorError("classifier probability outside [0, 1]");
      const bool flagged = p >= threshold_;
      return {flagged, flagged ? p : 1.0 - p};
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (res && res->status < 500) break;
    if (attempt < max_attempts_) std::this_thread::sleep_for(std::chrono::milliseconds(100 * attempt));
  }
  throw DetectorError("classifier at " + base_url_ + " failed: " + last_error);
}

}  // namespace emcee
