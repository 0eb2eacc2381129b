#include "wasmlab/scenarios.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

namespace wasmlab {

namespace {

bool parse_bool(const std::string& key, std::string_view v) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw LabError(Errc::Usage, "config key '" + key + "' expects a boolean, got '" + std::string(v) + "'");
}

std::string trim(std::string_view s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

bool variant_supported(Scenario s, Variant v) {
    switch (s) {
    case Scenario::Sqli: return true;
    case Scenario::Ssti: return v != Variant::Iof;
    case Scenario::Xsleak: return v == Variant::Bof || v == Variant::Uaf;
    }
    return false;
}

std::uint64_t parse_uint(const std::string& key, const std::string& value, std::uint64_t max) {
    std::uint64_t v = 0;
    std::size_t used = 0;
    try {
        if (!value.empty() && value[0] != '-') v = std::stoull(value, &used, 0);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used == 0 || used != value.size() || v > max)
        throw LabError(Errc::Usage, key + " must be an integer up to " + std::to_string(max) + ", got '" + value + "'");
    return v;
}

bool is_lower_hex(std::string_view s) {
    return std::all_of(s.begin(), s.end(), [](char c) { return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f'); });
}

}  // namespace

LabConfig parse_config(std::string_view text) {
    LabConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        auto t = trim(line);
        if (t.empty()) continue;
        auto eq = t.find('=');
        if (eq == std::string::npos)
            throw LabError(Errc::Usage, "config line " + std::to_string(lineno) + " is not key=value");
        auto key = trim(std::string_view(t).substr(0, eq));
        auto value = trim(std::string_view(t).substr(eq + 1));
        if (key == "variant" || key == "vector") cfg.variant = parse_variant(value);
        else if (key == "scenario") continue;  // every scenario is served; kept for report labelling
        else if (key == "hardening") cfg.hardening = parse_hardening(value);
        else if (key == "canaries") cfg.hardening.canaries = parse_bool(key, value);
        else if (key == "checked_copy") cfg.hardening.checked_copy = parse_bool(key, value);
        else if (key == "quarantine_and_zero") cfg.hardening.quarantine_and_zero = parse_bool(key, value);
        else if (key == "template_integrity") cfg.hardening.template_integrity = parse_bool(key, value);
        else if (key == "boundary_validation") cfg.hardening.boundary_validation = parse_bool(key, value);
        else if (key == "port") cfg.port = static_cast<std::uint16_t>(parse_uint(key, value, 65535));
        else if (key == "auth_token") cfg.policy.auth_token = value;
        else if (key == "planted_secret") cfg.planted_secret = value;
        else if (key == "id_nonzero_check") cfg.policy.id_nonzero_check = parse_bool(key, value);
        else if (key == "pattern_sanitizer") cfg.policy.pattern_sanitizer = parse_bool(key, value);
        else if (key == "test_mode") cfg.test_mode = parse_bool(key, value);
        else if (key == "seed") cfg.seed = parse_uint(key, value, UINT64_MAX);
        else if (key == "fixtures") cfg.fixture_path = value;
        else if (key == "backend") cfg.backend = parse_backend_kind(value);
        else if (key == "max_steps") cfg.budget.max_steps = parse_uint(key, value, UINT64_MAX);
        else throw LabError(Errc::Usage, "unknown config key '" + key + "'");
    }
    if (cfg.planted_secret.size() < 21 || cfg.planted_secret.size() >= layout::kSecretLen)
        throw LabError(Errc::Usage, "planted_secret must be 21..31 characters");
    return cfg;
}

LabConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LabError(Errc::Usage, "cannot open config " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    auto cfg = parse_config(ss.str());
    // Relative fixture paths are relative to the config file.
    if (cfg.fixture_path && std::filesystem::path(*cfg.fixture_path).is_relative())
        cfg.fixture_path = (std::filesystem::path(path).parent_path() / *cfg.fixture_path).string();
    return cfg;
}

std::int32_t narrow_to_i32(std::int64_t value) {
    return static_cast<std::int32_t>(static_cast<std::uint32_t>(value));
}

std::int64_t as_js_number(std::int64_t value) {
    constexpr std::int64_t kSafe = (std::int64_t{1} << 53) - 1;
    if (value >= -kSafe && value <= kSafe) return value;
    double d = static_cast<double>(value);
    if (d >= 9.2233720368547758e18) return std::numeric_limits<std::int64_t>::max();
    return static_cast<std::int64_t>(d);
}

std::string sanitize_pattern(std::string_view query) {
    static constexpr std::string_view kMeta = "^$.+*(){}[]?|\\";
    std::string out;
    for (char c : query)
        if (kMeta.find(c) == std::string_view::npos) out.push_back(c);
    return out;
}

ScenarioState::ScenarioState(Scenario scenario, LabConfig config)
    : scenario_(scenario), config_(std::move(config)) {
    InstanceSpec spec{scenario_, config_.variant, config_.hardening, config_.seed};
    backend_ = instantiate(config_.backend, spec);
}

void ScenarioState::finish_init() {
    apply_fixtures();
    initial_snapshot_ = backend_->snapshot();
}

Bytes ScenarioState::snapshot() const {
    std::lock_guard lock(mu_);
    return backend_->snapshot();
}

void ScenarioState::reset_locked() {
    InstanceSpec spec{scenario_, config_.variant, config_.hardening, config_.seed};
    backend_ = instantiate(config_.backend, spec);
    apply_fixtures();
    ++resets_;
}

std::uint32_t ScenarioState::call_locked(std::string_view name, std::vector<std::uint32_t> args) {
    try {
        return backend_->call_export(name, args);
    } catch (const TrapError& e) {
        reset_locked();
        if (e.cause() == Errc::Canary) throw LabError(Errc::Canary, e.cause_detail());
        throw;
    }
}

void ScenarioState::require_variant(std::initializer_list<Variant> allowed, std::string_view op) const {
    if (std::find(allowed.begin(), allowed.end(), config_.variant) == allowed.end())
        throw LabError(Errc::Unsupported, std::string(op) + " is not available in the " +
                                              std::string(to_string(config_.variant)) + " variant");
}

std::string ScenarioState::echo(ByteView format, std::vector<std::uint32_t> args) {
    require_variant({Variant::Ufs}, "echo");
    if (args.size() > 2) throw LabError(Errc::Args, "echo takes at most two arguments");
    args.resize(2, 0);
    Bytes data(format.begin(), format.end());
    data.push_back(0);
    std::lock_guard lock(mu_);
    auto addr = stage_locked(data);
    call_locked("fmt_echo", {addr, args[0], args[1]});
    return backend_->take_output();
}

SqliScenario::SqliScenario(LabConfig config, TableStore store)
    : ScenarioState(Scenario::Sqli, std::move(config)), store_(std::move(store)) {
    if (config_.fixture_path) store_ = load_tables_file(*config_.fixture_path);
    auto addr = backend_->call("sqli_get_query_addr");
    stmt_ = prepare(backend_->memory().read_cstring(addr, layout::kQueryLen), config_.hardening.template_integrity);
    finish_init();
}

TokenOutcome SqliScenario::set_token(ByteView token, std::vector<std::uint32_t> args) {
    if (token.size() > kRequestCap) throw LabError(Errc::Size, "token exceeds the request cap");
    std::lock_guard lock(mu_);
    TokenOutcome out;
    if (config_.variant == Variant::Ufs) {
        if (args.size() > 2) throw LabError(Errc::Args, "token logging takes at most two words");
        args.resize(2, 0);
        Bytes fmt(token.begin(), token.end());
        fmt.push_back(0);
        auto addr = stage_locked(fmt);
        out.value = call_locked("sqli_set_token", {addr, static_cast<std::uint32_t>(token.size()), args[0], args[1]});
        out.output = backend_->take_output();
        return out;
    }
    auto addr = stage_locked(token);
    auto len = static_cast<std::uint32_t>(token.size());
    if (config_.variant == Variant::Uaf && len == 0) throw LabError(Errc::Size, "empty token");
    out.value = call_locked("sqli_set_token", {addr, len});
    if (config_.variant != Variant::Uaf)
        out.truncated = config_.hardening.checked_copy && len > layout::kTokenLen;
    return out;
}

UafOutcome SqliScenario::free_and_reallocate(ByteView payload) {
    require_variant({Variant::Uaf}, "free_and_reallocate");
    UafOutcome out;
    out.freed_addr = query_addr();
    out.new_addr = set_token(payload).value;
    return out;
}

std::uint32_t SqliScenario::query_addr() const {
    std::lock_guard lock(mu_);
    return backend_->call("sqli_get_query_addr");
}

std::string SqliScenario::current_template() const {
    std::lock_guard lock(mu_);
    auto addr = backend_->call("sqli_get_query_addr");
    return backend_->memory().read_cstring(addr, layout::kQueryLen);
}

QueryResult SqliScenario::lookup(std::optional<std::int64_t> user_id) {
    std::vector<Value> bindings;
    if (user_id) {
        std::int64_t received = as_js_number(*user_id);
        if (config_.policy.id_nonzero_check && received == 0)
            throw LabError(Errc::Forbidden, "user id 0 is restricted");
        if (config_.hardening.boundary_validation && !(received > 0 && received < (std::int64_t{1} << 31)))
            throw LabError(Errc::Boundary, "user id " + std::to_string(received) + " outside (0, 2^31)");
        bindings.emplace_back(std::int64_t{narrow_to_i32(received)});
    }
    std::string template_now;
    {
        std::lock_guard lock(mu_);
        auto addr = backend_->call("sqli_get_query_addr");
        template_now = backend_->memory().read_cstring(addr, layout::kQueryLen);
    }
    return execute(stmt_, template_now, bindings, store_);
}

SstiScenario::SstiScenario(LabConfig config) : ScenarioState(Scenario::Ssti, std::move(config)) {
    finish_init();
}

std::uint32_t SstiScenario::target_chunk_size() const {
    std::lock_guard lock(mu_);
    auto p = backend_->memory().load_u32(layout::kNoncePtr);
    if (auto s = backend_->allocator().chunk_size(p)) return *s;
    return 32;
}

PageOutcome SstiScenario::render_locked(std::uint32_t nonce_addr) {
    PageOutcome out;
    out.nonce_addr = nonce_addr;
    out.nonce = backend_->memory().read_cstring(nonce_addr, layout::kPatternLen);
    if (config_.hardening.boundary_validation &&
        (out.nonce.size() != layout::kNonceHexChars || !is_lower_hex(out.nonce)))
        throw LabError(Errc::Boundary, "nonce from guest is not 16 lowercase hex characters");
    out.render = compile_and_render(build_page(out.nonce, kPageBody));
    return out;
}

PageOutcome SstiScenario::page(std::optional<Bytes> comment) {
    std::lock_guard lock(mu_);
    switch (config_.variant) {
    case Variant::Bof: {
        Bytes data = comment.value_or(Bytes{});
        auto addr = stage_locked(data);
        auto nonce = call_locked("ssti_make_nonce", {addr, static_cast<std::uint32_t>(data.size())});
        return render_locked(nonce);
    }
    case Variant::Ufs:
        return render_locked(call_locked("ssti_make_nonce", {}));
    case Variant::Uaf: {
        auto nonce = call_locked("ssti_make_nonce", {});
        std::optional<std::uint32_t> comment_addr;
        if (comment && !comment->empty()) {
            // Saving a comment releases the nonce while the page still
            // references it.
            call_locked("ssti_free_nonce", {});
            auto addr = stage_locked(*comment);
            comment_addr = call_locked("ssti_set_comment", {addr, static_cast<std::uint32_t>(comment->size())});
        }
        auto out = render_locked(nonce);
        out.comment_addr = comment_addr;
        return out;
    }
    case Variant::Iof:
        break;
    }
    throw LabError(Errc::Unsupported, "ssti has no iof variant");
}

UafOutcome SstiScenario::free_and_reallocate(ByteView payload) {
    require_variant({Variant::Uaf}, "free_and_reallocate");
    auto out = page(Bytes(payload.begin(), payload.end()));
    return {out.nonce_addr, out.comment_addr.value_or(0)};
}

XsleakScenario::XsleakScenario(LabConfig config) : ScenarioState(Scenario::Xsleak, std::move(config)) {
    finish_init();
}

void XsleakScenario::apply_fixtures() {
    auto& mem = backend_->memory();
    auto plant = [&](std::uint32_t slot, std::string_view text) {
        auto addr = backend_->call("xsleak_get_secret_addr", {slot});
        mem.fill(addr, layout::kSecretLen, 0);
        mem.write(addr, text.substr(0, layout::kSecretLen - 1));
    };
    plant(kVictimSlot, config_.planted_secret);
    plant(kAttackerSlot, config_.attacker_secret);
}

std::uint32_t XsleakScenario::store_secret(Requester who, std::uint32_t slot, ByteView data) {
    if (who == Requester::Attacker && slot != kAttackerSlot)
        throw LabError(Errc::Forbidden, "attacker session may only write its own slot");
    if (data.empty()) throw LabError(Errc::Size, "empty secret");
    std::lock_guard lock(mu_);
    auto addr = stage_locked(data);
    return call_locked("xsleak_store_secret", {slot, addr, static_cast<std::uint32_t>(data.size())});
}

ResponseEnvelope XsleakScenario::search(Requester who, std::optional<std::string> query) {
    ResponseEnvelope env;
    env.route = "/xsleak/search";
    std::lock_guard lock(mu_);
    auto start = std::chrono::steady_clock::now();
    if (query) {
        auto text = config_.policy.pattern_sanitizer ? sanitize_pattern(*query) : *query;
        auto addr = stage_locked(to_bytes(text));
        call_locked("xsleak_set_pattern", {addr, static_cast<std::uint32_t>(text.size())});
    }
    auto slot = who == Requester::Victim ? kVictimSlot : kAttackerSlot;
    MatchOutcome outcome;
    try {
        auto& mem = backend_->memory();
        auto pattern = mem.read_cstring(backend_->call("xsleak_get_pattern_addr"), layout::kPatternLen);
        auto subject = mem.read_cstring(backend_->call("xsleak_get_secret_addr", {slot}), layout::kSecretLen);
        outcome = match_steps(parse_regex(pattern), subject, config_.budget);
    } catch (const LabError&) {
        // Unreadable or invalid patterns behave like an instant miss.
        outcome = {};
    }
    env.elapsed = std::chrono::steady_clock::now() - start;
    env.status = 200;
    env.body = "ok";
    if (config_.test_mode) env.steps = outcome.steps;
    return env;
}

std::uint32_t XsleakScenario::pattern_addr() const {
    std::lock_guard lock(mu_);
    return backend_->call("xsleak_get_pattern_addr");
}

std::string XsleakScenario::current_pattern() const {
    std::lock_guard lock(mu_);
    return backend_->memory().read_cstring(backend_->call("xsleak_get_pattern_addr"), layout::kPatternLen);
}

UafOutcome XsleakScenario::free_and_reallocate(ByteView payload) {
    require_variant({Variant::Uaf}, "free_and_reallocate");
    UafOutcome out;
    out.freed_addr = pattern_addr();
    out.new_addr = store_secret(Requester::Victim, kLastSlot, payload);
    return out;
}

Lab::Lab(const LabConfig& cfg) : config(cfg) {
    sqli = std::make_unique<SqliScenario>(cfg);
    if (variant_supported(Scenario::Ssti, cfg.variant)) ssti = std::make_unique<SstiScenario>(cfg);
    if (variant_supported(Scenario::Xsleak, cfg.variant)) xsleak = std::make_unique<XsleakScenario>(cfg);
}

}  // namespace wasmlab
