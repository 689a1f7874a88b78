#pragma once

#include <chrono>
#include <cstdlib>
#include <string>

#include <httplib.h>
#include <json.hpp>

#include "longclip/longcap/backend.hpp"

namespace longclip::longcap {

struct HttpBackendOptions {
  std::string endpoint;  // http://host[:port]/path
  std::string token_env = "LONGCLIP_BACKEND_TOKEN";
  double timeout_seconds = 120.0;
};

// POSTs {"prompt", "image_ref"} as JSON and returns the plain-text response body.
// The bearer token, if any, comes from the environment variable named in the options.
class HttpBackend : public GenerationBackend {
 public:
  explicit HttpBackend(HttpBackendOptions opt) : opt_(std::move(opt)) {
    const std::string prefix = "http://";
    if (opt_.endpoint.rfind(prefix, 0) != 0)
      throw UsageError("backend endpoint must start with http:// (got '" + opt_.endpoint + "')");
    const auto slash = opt_.endpoint.find('/', prefix.size());
    host_ = opt_.endpoint.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : opt_.endpoint.substr(slash);
    if (host_.size() == prefix.size()) throw UsageError("backend endpoint has no host: '" + opt_.endpoint + "'");
    if (!(opt_.timeout_seconds > 0)) throw UsageError("backend timeout must be positive");
  }

  std::string descriptor() const override { return opt_.endpoint; }

  std::string generate(const GenerationRequest& request) override {
    httplib::Client client(host_);  // one client per call keeps concurrent requests independent
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(opt_.timeout_seconds));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);
    httplib::Headers headers;
    if (const char* token = std::getenv(opt_.token_env.c_str()); token && *token)
      headers.emplace("Authorization", std::string("Bearer ") + token);
    nlohmann::json body{{"prompt", request.prompt}};
    if (request.image_ref) body["image_ref"] = *request.image_ref;
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw BackendError("backend " + opt_.endpoint + ": " + httplib::to_string(res.error()));
    if (res->status != 200)
      throw BackendError("backend " + opt_.endpoint + " answered HTTP " + std::to_string(res->status));
    return res->body;
  }

 private:
  HttpBackendOptions opt_;
  std::string host_;
  std::string path_;
};

}  // namespace longclip::longcap
