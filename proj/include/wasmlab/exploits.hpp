#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "wasmlab/scenarios.hpp"

namespace wasmlab {

// 'A' * fill_len + inject + NUL. ESIZE if fill_len + len(inject) > 4096.
Bytes build_bof_payload(std::uint32_t fill_len, std::string_view inject);

struct FormatRequest {
    std::string format;
    std::vector<std::uint32_t> varargs;
};

struct FormatWritePlan {
    std::uint32_t target_addr = 0;
    Bytes target_bytes;
    std::vector<FormatRequest> requests;  // ascending target addresses
};

inline constexpr std::uint32_t kFormatScratch = 3;

// One %n request per payload byte: payload[i] literal 'A's then "%n" aimed at
// target_addr + i. Each 4-byte store clobbers the next three bytes, which the
// following request rewrites, so three bytes past the end are scratch.
FormatWritePlan plan_format_write(std::uint32_t target_addr, ByteView payload);
FormatWritePlan plan_format_write(std::uint32_t target_addr, std::string_view payload);

using FormatSink = std::function<void(const FormatRequest&)>;
void execute_plan(const FormatWritePlan& plan, const FormatSink& sink);

// Frees the scenario's target object and allocates `payload` in its place.
// EGROOM unless the new allocation landed on the freed address.
UafOutcome groom_uaf(UafTarget& target, ByteView payload);

// text + NUL, zero padded so the allocation falls inside the reuse window of
// a chunk of `chunk_size` bytes.
Bytes uaf_payload(std::string_view text, std::uint32_t chunk_size);

enum class OracleMode { Steps, WallClock };
std::string_view to_string(OracleMode m);
OracleMode parse_oracle_mode(std::string_view s);

struct TimingSample {
    char guess = 0;
    std::chrono::nanoseconds elapsed{0};
    std::optional<std::uint64_t> steps;
};

enum class Verdict { Hit, Miss };

struct OracleDecision {
    char guess = 0;
    Verdict verdict = Verdict::Miss;
    double observable = 0;  // median steps, or median nanoseconds
    double threshold = 0;
};

// Groups samples by guess (first-seen order). The observable is steps when
// every sample of a guess carries them, elapsed nanoseconds otherwise.
std::vector<OracleDecision> decide(const std::vector<TimingSample>& samples, double threshold);

// Search gadgets appended to "^" + prefix + guess.
enum class Gadget {
    Linear,         // (.*){2048}: ~6k steps whenever the prefix matches
    Nested,         // (.+){21}
    NestedTrailing  // (.+){21}! : forces the failing path
};
std::string_view to_string(Gadget g);
Gadget parse_gadget(std::string_view s);
std::string gadget_pattern(Gadget g, std::string_view prefix);

struct CalibrationRow {
    std::string label;
    std::string pattern;
    std::uint64_t steps = 0;
    std::chrono::nanoseconds elapsed{0};
};

struct Calibration {
    OracleMode mode = OracleMode::Steps;
    Gadget gadget = Gadget::Linear;
    std::vector<CalibrationRow> rows;
    double hit = 0;
    double miss = 0;
    double threshold = 0;  // geometric mean of hit and miss observables
    double ratio = 0;
};

// Two-point calibration on a local replica of the search endpoint: a
// synthetic subject of `subject_len` characters, one correct and one wrong
// first-character guess, `samples` runs each.
Calibration calibrate(Gadget gadget, OracleMode mode, std::uint32_t subject_len = 24, std::uint32_t samples = 3,
                      StepBudget budget = {});

std::string format_calibration_table(const Calibration& cal);

inline constexpr std::string_view kDefaultAlphabet = "abcdefghijklmnopqrstuvwxyz0123456789";

// Attacker capability to place a pattern where the victim's search reads it.
using PatternWriter = std::function<void(const std::string& pattern)>;

PatternWriter bof_pattern_writer(XsleakScenario& s);
PatternWriter uaf_pattern_writer(XsleakScenario& s);

struct ReconstructOptions {
    std::string alphabet{kDefaultAlphabet};
    std::uint32_t max_len = layout::kSecretLen - 1;
    // Secrets are known to be at least this long; running out of candidates
    // earlier is EEXHAUSTED, later it ends the secret.
    std::uint32_t min_len = 21;
    OracleMode mode = OracleMode::Steps;
    std::uint32_t samples = 1;
    Gadget gadget = Gadget::Linear;
    double threshold = 0;
};

struct ReconstructResult {
    std::string recovered;
    std::uint32_t requests = 0;  // victim-role searches issued
    std::uint32_t write_failures = 0;
};

// Position by position, writes "^" + known + c + gadget for each candidate c
// and forces a victim search. EAMBIGUOUS if several candidates hit (after one
// retry with doubled samples in wall-clock mode), EEXHAUSTED if none hits
// before min_len.
ReconstructResult reconstruct_secret(XsleakScenario& s, const PatternWriter& write,
                                     const ReconstructOptions& opts);

struct ExploitOptions {
    LabConfig base;  // variant and hardening are overridden
    OracleMode mode = OracleMode::Steps;
    std::uint32_t samples = 0;  // 0: 1 in steps mode, 3 in wall-clock mode
    std::string alphabet{kDefaultAlphabet};
};

struct ExploitReport {
    Scenario scenario = Scenario::Sqli;
    Variant vector = Variant::Bof;
    HardeningConfig hardening;
    bool success = false;
    std::uint32_t requests = 0;
    nlohmann::json evidence = nlohmann::json::object();
    std::vector<ByteRange> memory_diff;
};

nlohmann::json to_json(const ExploitReport& r);

bool exploit_supported(Scenario s, Variant v);

// The flag expected to defeat each vector.
HardeningConfig designated_hardening(Scenario s, Variant v);

// Runs the full chain on a fresh lab. EUNSUPPORTED for pairs without a guest
// variant; everything else is reported, not thrown.
ExploitReport run_exploit(Scenario s, Variant v, const HardeningConfig& h, const ExploitOptions& opts = {});

}  // namespace wasmlab
