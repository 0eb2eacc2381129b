#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>

#include "wasmlab/scenarios.hpp"

namespace wasmlab {

struct HttpRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::map<std::string, std::string> headers;  // lower-case names
    std::string body;
};

struct HttpResponse {
    int status = 200;
    std::string content_type = "application/json";
    std::string body;
    std::map<std::string, std::string> headers;
};

int http_status(Errc code);

// LAB_PORT overrides the configured port. EUSAGE on a malformed value.
std::uint16_t resolve_port(const LabConfig& config);

// Routes:
//   GET  /health
//   POST /sqli/token      {"token"|"token_hex", "args"}
//   GET  /sqli/lookup?id=
//   GET  /ssti/page?comment=|comment_hex=
//   POST /ssti/echo, /sqli/echo  {"format"|"format_hex", "args"}  (ufs)
//   POST /xsleak/secret   {"slot", "secret"|"secret_hex"}
//   POST /xsleak/search   {"query"}
// "Authorization: Bearer <auth_token>" marks a victim-session request.
class LabService {
public:
    explicit LabService(const LabConfig& config);
    ~LabService();

    HttpResponse handle(const HttpRequest& req);

    // Blocks until stop(). on_ready receives the bound port.
    void serve(const std::string& host, std::uint16_t port, std::function<void(int)> on_ready = {});
    void stop();

    Lab& lab() { return lab_; }

private:
    Lab lab_;
    struct Server;
    std::unique_ptr<Server> server_;
};

}  // namespace wasmlab
