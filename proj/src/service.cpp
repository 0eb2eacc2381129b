#include "wasmlab/service.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>

#include <httplib.h>
#include <json.hpp>

namespace wasmlab {

using json = nlohmann::json;

int http_status(Errc code) {
    switch (code) {
    case Errc::Forbidden: return 403;
    case Errc::Boundary:
    case Errc::Usage:
    case Errc::Args:
    case Errc::BadFmt: return 400;
    case Errc::Size: return 413;
    case Errc::NoExport: return 404;
    case Errc::Unsupported: return 501;
    default: return 500;
    }
}

std::uint16_t resolve_port(const LabConfig& config) {
    const char* env = std::getenv("LAB_PORT");
    if (!env || !*env) return config.port;
    std::string_view s(env);
    unsigned v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size() || v > 65535)
        throw LabError(Errc::Usage, "LAB_PORT must be a port number, got '" + std::string(s) + "'");
    return static_cast<std::uint16_t>(v);
}

struct LabService::Server {
    httplib::Server http;
};

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

HttpResponse json_response(int status, const json& body) {
    HttpResponse r;
    r.status = status;
    r.body = body.dump();
    return r;
}

HttpResponse error_response(const LabError& e) {
    json body{{"error", std::string(errc_name(e.code()))}, {"detail", e.what()}};
    if (auto* t = dynamic_cast<const TrapError*>(&e)) body["trap_cause"] = std::string(errc_name(t->cause()));
    return json_response(http_status(e.code()), body);
}

json parse_body(const HttpRequest& req) {
    if (req.body.empty()) return json::object();
    auto j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw LabError(Errc::Usage, "request body must be a JSON object");
    return j;
}

// Text field or its hex twin ("token" / "token_hex").
std::optional<Bytes> bytes_field(const json& j, const std::string& name) {
    if (j.contains(name + "_hex")) return from_hex(j.at(name + "_hex").get<std::string>());
    if (j.contains(name)) return to_bytes(j.at(name).get<std::string>());
    return std::nullopt;
}

std::vector<std::uint32_t> args_field(const json& j) {
    std::vector<std::uint32_t> out;
    if (!j.contains("args")) return out;
    for (const auto& a : j.at("args")) out.push_back(a.get<std::uint32_t>());
    return out;
}

json rows_json(const QueryResult& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        json out = json::array();
        for (const auto& v : row) {
            if (auto* i = std::get_if<std::int64_t>(&v)) out.push_back(*i);
            else out.push_back(std::get<std::string>(v));
        }
        rows.push_back(out);
    }
    return rows;
}

template <class T>
T& need(const std::unique_ptr<T>& p, std::string_view what) {
    if (!p) throw LabError(Errc::Unsupported, std::string(what) + " is not available for this variant");
    return *p;
}

std::int64_t parse_id(const std::string& s) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || p != s.data() + s.size())
        throw LabError(Errc::Usage, "id must be an integer, got '" + s + "'");
    return v;
}

}  // namespace

LabService::LabService(const LabConfig& config) : lab_(config), server_(std::make_unique<Server>()) {}

LabService::~LabService() = default;

HttpResponse LabService::handle(const HttpRequest& req) {
    auto t0 = std::chrono::steady_clock::now();
    bool victim = false;
    if (auto it = req.headers.find("authorization"); it != req.headers.end())
        victim = it->second == "Bearer " + lab_.config.policy.auth_token;
    Requester who = victim ? Requester::Victim : Requester::Attacker;
    const auto& route = req.path;

    if (route == "/xsleak/search") {
        // Blind contract: the body and status never depend on the outcome.
        HttpResponse r;
        r.content_type = "text/plain";
        r.body = "ok";
        try {
            auto& x = need(lab_.xsleak, "xsleak");
            std::optional<std::string> query;
            auto j = parse_body(req);
            if (j.contains("query")) query = j.at("query").get<std::string>();
            auto env = x.search(who, query);
            if (env.steps) r.headers["X-Lab-Steps"] = std::to_string(*env.steps);
        } catch (const std::exception&) {
        }
        return r;
    }

    try {
        if (route == "/health") {
            HttpResponse r;
            r.content_type = "text/plain";
            r.body = "ok";
            return r;
        }
        if (route == "/sqli/token" && req.method == "POST") {
            auto j = parse_body(req);
            auto token = bytes_field(j, "token");
            if (!token) throw LabError(Errc::Usage, "missing token");
            auto out = lab_.sqli->set_token(*token, args_field(j));
            json body{{"status", "ok"}, {"value", out.value}, {"truncated", out.truncated}};
            if (!out.output.empty()) body["output"] = out.output;
            body["elapsed_ms"] = ms_since(t0);
            return json_response(200, body);
        }
        if (route == "/sqli/lookup" && req.method == "GET") {
            std::optional<std::int64_t> id;
            if (auto it = req.query.find("id"); it != req.query.end()) id = parse_id(it->second);
            auto res = lab_.sqli->lookup(id);
            return json_response(200, {{"columns", res.columns}, {"rows", rows_json(res)}, {"elapsed_ms", ms_since(t0)}});
        }
        if (route == "/ssti/page" && req.method == "GET") {
            auto& s = need(lab_.ssti, "ssti");
            std::optional<Bytes> comment;
            if (auto it = req.query.find("comment_hex"); it != req.query.end()) comment = from_hex(it->second);
            else if (auto c = req.query.find("comment"); c != req.query.end()) comment = to_bytes(c->second);
            auto page = s.page(comment);
            HttpResponse r;
            r.content_type = "text/html";
            r.body = page.render.output;
            r.headers["X-Elapsed-Ms"] = std::to_string(ms_since(t0));
            return r;
        }
        if ((route == "/ssti/echo" || route == "/sqli/echo") && req.method == "POST") {
            ScenarioState& st = route == "/ssti/echo" ? static_cast<ScenarioState&>(need(lab_.ssti, "ssti"))
                                                      : static_cast<ScenarioState&>(*lab_.sqli);
            auto j = parse_body(req);
            auto fmt = bytes_field(j, "format");
            if (!fmt) throw LabError(Errc::Usage, "missing format");
            auto out = st.echo(*fmt, args_field(j));
            return json_response(200, {{"output", out}, {"elapsed_ms", ms_since(t0)}});
        }
        if (route == "/xsleak/secret" && req.method == "POST") {
            auto& x = need(lab_.xsleak, "xsleak");
            auto j = parse_body(req);
            auto secret = bytes_field(j, "secret");
            if (!secret) throw LabError(Errc::Usage, "missing secret");
            auto slot = j.value("slot", who == Requester::Victim ? XsleakScenario::kVictimSlot
                                                                 : XsleakScenario::kAttackerSlot);
            auto v = x.store_secret(who, slot, *secret);
            return json_response(200, {{"status", "ok"}, {"value", v}, {"elapsed_ms", ms_since(t0)}});
        }
        return json_response(404, {{"error", "ENOROUTE"}, {"detail", req.method + " " + route}});
    } catch (const LabError& e) {
        return error_response(e);
    } catch (const json::exception& e) {
        return json_response(400, {{"error", "EUSAGE"}, {"detail", e.what()}});
    }
}

void LabService::serve(const std::string& host, std::uint16_t port, std::function<void(int)> on_ready) {
    auto& http = server_->http;
    http.set_payload_max_length(2 * kRequestCap + 1024);
    auto adapt = [this](const httplib::Request& in, httplib::Response& out) {
        HttpRequest req;
        req.method = in.method;
        req.path = in.path;
        for (const auto& [k, v] : in.params) req.query[k] = v;
        for (const auto& [k, v] : in.headers) {
            std::string name = k;
            for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            req.headers[name] = v;
        }
        req.body = in.body;
        auto r = handle(req);
        out.status = r.status;
        for (const auto& [k, v] : r.headers) out.set_header(k, v);
        out.set_content(r.body, r.content_type);
    };
    http.Get(".*", adapt);
    http.Post(".*", adapt);
    int bound = port == 0 ? http.bind_to_any_port(host) : (http.bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw LabError(Errc::Usage, "cannot bind " + host + ":" + std::to_string(port));
    if (on_ready) on_ready(bound);
    http.listen_after_bind();
}

void LabService::stop() { server_->http.stop(); }

}  // namespace wasmlab
