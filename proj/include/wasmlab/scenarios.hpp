#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "wasmlab/host.hpp"
#include "wasmlab/minitemplate.hpp"
#include "wasmlab/miniquery.hpp"
#include "wasmlab/regexlite.hpp"

namespace wasmlab {

struct FrontendPolicy {
    // Rejects user_id == 0, evaluated on the value as received (JavaScript
    // number semantics: integers exact up to 2^53 - 1).
    bool id_nonzero_check = true;
    // Strips regex metacharacters from user-supplied search text.
    bool pattern_sanitizer = true;
    std::string auth_token = "victim-session";
};

struct LabConfig {
    Variant variant = Variant::Bof;
    HardeningConfig hardening;
    FrontendPolicy policy;
    std::string planted_secret = "trustno1trustno1trustno1";
    std::string attacker_secret = "attacker-own-notes";
    std::uint64_t seed = 0x5eed;
    // Deterministic mode: xsleak responses carry the matcher step count.
    bool test_mode = true;
    StepBudget budget;
    BackendKind backend = BackendKind::Sim;
    std::optional<std::string> fixture_path;
    std::uint16_t port = 8080;
};

// key=value lines: scenario variant (vector|variant), hardening, port,
// auth_token, planted_secret, id_nonzero_check, pattern_sanitizer,
// test_mode, seed, fixtures. Individual hardening flags may also be given
// as "<flag>=true".
LabConfig parse_config(std::string_view text);
LabConfig load_config(const std::string& path);

enum class Requester { Attacker, Victim };

struct ResponseEnvelope {
    std::string route;
    std::uint16_t status = 200;
    std::string body;
    std::chrono::nanoseconds elapsed{0};
    std::optional<std::uint64_t> steps;
};

// Frontend-to-guest integer marshaling: value mod 2^32 as signed 32-bit.
std::int32_t narrow_to_i32(std::int64_t value);

// What a JavaScript frontend sees after JSON-decoding an integer: values
// beyond 2^53 lose precision.
std::int64_t as_js_number(std::int64_t value);

std::string sanitize_pattern(std::string_view query);

struct UafOutcome {
    std::uint32_t freed_addr = 0;
    std::uint32_t new_addr = 0;
};

// Scenarios whose uaf variant frees a live object and then services a
// user-sized allocation.
class UafTarget {
public:
    virtual ~UafTarget() = default;
    virtual UafOutcome free_and_reallocate(ByteView payload) = 0;
    virtual std::uint32_t target_chunk_size() const = 0;
};

// Common state: one backend per scenario with serialized access. A guest
// trap discards the instance and re-instantiates it with fixtures restored.
class ScenarioState {
public:
    ScenarioState(Scenario scenario, LabConfig config);
    virtual ~ScenarioState() = default;

    ScenarioState(const ScenarioState&) = delete;
    ScenarioState& operator=(const ScenarioState&) = delete;

    Scenario scenario() const { return scenario_; }
    const LabConfig& config() const { return config_; }

    Bytes snapshot() const;
    const Bytes& initial_snapshot() const { return initial_snapshot_; }
    std::uint32_t resets() const { return resets_; }

    // Uncontrolled format string path (ufs variants only).
    std::string echo(ByteView format, std::vector<std::uint32_t> args);

protected:
    virtual void apply_fixtures() {}
    void reset_locked();
    std::uint32_t call_locked(std::string_view name, std::vector<std::uint32_t> args);
    std::uint32_t stage_locked(ByteView data) { return stage_input(*backend_, data); }
    void require_variant(std::initializer_list<Variant> allowed, std::string_view op) const;

    void finish_init();

    Scenario scenario_;
    LabConfig config_;
    std::unique_ptr<Backend> backend_;
    Bytes initial_snapshot_;
    std::uint32_t resets_ = 0;
    mutable std::mutex mu_;
};

struct TokenOutcome {
    std::uint32_t value = 0;  // bytes copied, printf length, or token address
    bool truncated = false;
    std::string output;
};

class SqliScenario final : public ScenarioState, public UafTarget {
public:
    explicit SqliScenario(LabConfig config, TableStore store = default_fixture());

    TokenOutcome set_token(ByteView token, std::vector<std::uint32_t> args = {});
    // Without an id the statement runs with no bindings.
    QueryResult lookup(std::optional<std::int64_t> user_id);

    std::string current_template() const;
    std::uint32_t query_addr() const;
    const PreparedStatement& statement() const { return stmt_; }
    const TableStore& tables() const { return store_; }

    UafOutcome free_and_reallocate(ByteView payload) override;
    std::uint32_t target_chunk_size() const override { return layout::kQueryLen; }

private:
    TableStore store_;
    PreparedStatement stmt_;
};

struct PageOutcome {
    RenderReport render;
    std::string nonce;
    std::uint32_t nonce_addr = 0;
    std::optional<std::uint32_t> comment_addr;
};

inline constexpr std::string_view kPageBody = "window.appReady = true;";

class SstiScenario final : public ScenarioState, public UafTarget {
public:
    explicit SstiScenario(LabConfig config);

    PageOutcome page(std::optional<Bytes> comment = std::nullopt);

    UafOutcome free_and_reallocate(ByteView payload) override;
    std::uint32_t target_chunk_size() const override;

private:
    PageOutcome render_locked(std::uint32_t nonce_addr);
};

class XsleakScenario final : public ScenarioState, public UafTarget {
public:
    explicit XsleakScenario(LabConfig config);

    std::uint32_t store_secret(Requester who, std::uint32_t slot, ByteView data);
    ResponseEnvelope search(Requester who, std::optional<std::string> query = std::nullopt);

    std::string current_pattern() const;
    std::uint32_t pattern_addr() const;
    std::string planted_secret() const { return config_.planted_secret; }

    UafOutcome free_and_reallocate(ByteView payload) override;
    std::uint32_t target_chunk_size() const override { return layout::kPatternLen; }

    static constexpr std::uint32_t kVictimSlot = 0;
    static constexpr std::uint32_t kAttackerSlot = 1;
    // Slot whose overflow reaches the pattern.
    static constexpr std::uint32_t kLastSlot = layout::kSecretSlots - 1;

protected:
    void apply_fixtures() override;
};

// The three scenario applications under one configuration. A scenario
// whose guest has no module for the configured variant is absent.
struct Lab {
    explicit Lab(const LabConfig& config);

    LabConfig config;
    std::unique_ptr<SqliScenario> sqli;
    std::unique_ptr<SstiScenario> ssti;
    std::unique_ptr<XsleakScenario> xsleak;
};

}  // namespace wasmlab
