#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wasmlab/linmem.hpp"

namespace wasmlab {

enum class BackendKind { Sim, Wasm };
enum class Scenario { Sqli, Ssti, Xsleak };
enum class Variant { Bof, Ufs, Uaf, Iof };

std::string_view to_string(BackendKind k);
std::string_view to_string(Scenario s);
std::string_view to_string(Variant v);
BackendKind parse_backend_kind(std::string_view s);
Scenario parse_scenario(std::string_view s);
Variant parse_variant(std::string_view s);

// Guest static data. Pointer globals for heap-allocated objects live at the
// start of the static segment.
namespace layout {
inline constexpr std::uint32_t kQueryPtr = 0x1000;
inline constexpr std::uint32_t kNoncePtr = 0x1004;
inline constexpr std::uint32_t kPatternPtr = 0x1008;
inline constexpr std::uint32_t kStaticQuery = 0x1040;
inline constexpr std::uint32_t kQueryLen = 64;
inline constexpr std::uint32_t kTokenLen = 32;
inline constexpr std::uint32_t kSecrets = 0x1100;
inline constexpr std::uint32_t kSecretSlots = 4;
inline constexpr std::uint32_t kSecretLen = 32;
inline constexpr std::uint32_t kPattern = 0x1180;
inline constexpr std::uint32_t kPatternLen = 64;
inline constexpr std::uint32_t kStaticNonce = 0x1200;
inline constexpr std::uint32_t kNonceLen = 17;
inline constexpr std::uint32_t kNonceHexChars = 16;
inline constexpr std::uint32_t kCommentLen = 32;
}  // namespace layout

inline constexpr std::string_view kDefaultQuery = "SELECT id, name, secret FROM users WHERE id = ?";
inline constexpr std::string_view kDefaultPattern = "secret";

// Raised by call_export when the guest faults. `cause` keeps the underlying
// condition (EOOB, EDOUBLEFREE, ECANARY, ...).
class TrapError : public LabError {
public:
    TrapError(Errc cause, const std::string& detail)
        : LabError(Errc::Trap, std::string(errc_name(cause)) + ": " + detail), cause_(cause), cause_detail_(detail) {}

    Errc cause() const noexcept { return cause_; }
    const std::string& cause_detail() const noexcept { return cause_detail_; }

private:
    Errc cause_;
    std::string cause_detail_;
};

// The unsafe runtime a guest imports: memory, allocator, copy, printf and a
// deterministic nonce source. Copies honour the checked_copy hardening flag.
class GuestRuntime {
public:
    GuestRuntime(HardeningConfig hardening, std::uint64_t seed);

    LinearMemory& memory() { return memory_; }
    const LinearMemory& memory() const { return memory_; }
    Allocator& allocator() { return allocator_; }
    const Allocator& allocator() const { return allocator_; }
    const HardeningConfig& hardening() const { return hardening_; }

    std::uint32_t copy(std::uint32_t dst, std::uint32_t src, std::uint32_t len, std::uint32_t capacity);
    std::uint32_t malloc(std::uint32_t n) { return allocator_.malloc(memory_, n); }
    void free(std::uint32_t addr) { allocator_.free(memory_, addr); }
    std::uint32_t printf(std::uint32_t fmt_addr, std::span<const std::uint32_t> args);
    void random_hex(std::uint32_t dst, std::uint32_t n);

    std::string take_output();
    bool last_copy_truncated() const { return last_truncated_; }

private:
    HardeningConfig hardening_;
    LinearMemory memory_;
    Allocator allocator_;
    std::uint64_t rng_state_;
    std::string output_;
    bool last_truncated_ = false;
};

// Execution backend. Both kinds expose the same surface.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendKind kind() const = 0;
    virtual Scenario scenario() const = 0;
    virtual Variant variant() const = 0;
    virtual std::vector<std::string> exports() const = 0;
    virtual std::uint32_t call_export(std::string_view name, std::span<const std::uint32_t> args) = 0;

    virtual LinearMemory& memory() = 0;
    virtual const LinearMemory& memory() const = 0;
    virtual const Allocator& allocator() const = 0;
    virtual std::string take_output() = 0;

    std::uint32_t call(std::string_view name, std::initializer_list<std::uint32_t> args = {}) {
        std::vector<std::uint32_t> v(args);
        return call_export(name, v);
    }

    Bytes snapshot() const { return serialize_snapshot(memory(), &allocator()); }
};

struct InstanceSpec {
    Scenario scenario = Scenario::Sqli;
    Variant variant = Variant::Bof;
    HardeningConfig hardening;
    std::uint64_t seed = 0x5eed;
};

std::unique_ptr<Backend> instantiate(BackendKind kind, const InstanceSpec& spec);

// Copies host bytes verbatim into the staging buffer. Returns the
// guest address. ESIZE if the data does not fit.
std::uint32_t stage_input(Backend& b, ByteView data);

// Scripted call lists: "CALL name arg...", "WRITE addr hexbytes",
// "EXPECT_SNAPSHOT file", plus a leading "SCENARIO name variant [flags]"
// directive. '#' starts a comment.
struct ScriptCall {
    std::string name;
    std::vector<std::uint32_t> args;
};
struct ScriptWrite {
    std::uint32_t addr = 0;
    Bytes data;
};
struct ScriptExpectSnapshot {
    std::string path;
};
using ScriptStep = std::variant<ScriptCall, ScriptWrite, ScriptExpectSnapshot>;

struct Script {
    InstanceSpec spec;
    std::vector<ScriptStep> steps;
    std::string base_dir;  // resolves relative snapshot paths
};

Script parse_script(std::string_view text, std::string base_dir = ".");
Script load_script(const std::string& path);

struct CallRecord {
    std::string name;
    std::optional<std::uint32_t> value;
    std::optional<Errc> trap;  // trap cause

    bool operator==(const CallRecord&) const = default;
};

struct ScriptRun {
    std::vector<CallRecord> calls;
    std::vector<std::string> output;  // per-call printf output
    Bytes final_snapshot;
    std::vector<std::string> snapshot_mismatches;
};

ScriptRun run_script(Backend& b, const Script& script);

struct DiffReport {
    bool identical = true;
    std::vector<std::string> return_diffs;
    std::vector<ByteRange> memory_diffs;
    bool metadata_differs = false;
};

using BackendFactory = std::function<std::unique_ptr<Backend>(const InstanceSpec&)>;

// Runs the script on both backends and compares every return value and the
// final snapshots byte-wise.
DiffReport diff_outcomes(const Script& script, const BackendFactory& a, const BackendFactory& b);
DiffReport diff_outcomes(const Script& script);

std::string to_hex(ByteView bytes);
Bytes from_hex(std::string_view hex);

}  // namespace wasmlab
