#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wasmlab/error.hpp"

namespace wasmlab {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

inline constexpr std::uint32_t kPageSize = 65536;
inline constexpr std::uint32_t kMemoryPages = 2;
inline constexpr std::uint32_t kMemorySize = kPageSize * kMemoryPages;

// Largest request body the lab's frontends accept.
inline constexpr std::uint32_t kRequestCap = 4096;

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }
inline std::string to_string(ByteView b) { return std::string(b.begin(), b.end()); }

// Fixed guest layout. Static data sits lowest, the unmanaged stack grows down
// from stack_top and the heap bump pointer starts at heap_base.
struct RegionMap {
    static constexpr std::uint32_t static_base = 0x1000;
    static constexpr std::uint32_t static_end = 0x2000;
    static constexpr std::uint32_t stack_limit = 0x2000;
    static constexpr std::uint32_t stack_top = 0x8000;
    static constexpr std::uint32_t heap_base = 0x8000;

    // Host-to-guest staging buffer for request bodies. It occupies the bottom
    // of the stack region, far below any frame the scenarios push.
    static constexpr std::uint32_t io_base = 0x2000;
    static constexpr std::uint32_t io_size = kRequestCap;
};

struct HardeningConfig {
    bool canaries = false;
    bool checked_copy = false;
    bool quarantine_and_zero = false;
    bool template_integrity = false;
    bool boundary_validation = false;

    bool any() const {
        return canaries || checked_copy || quarantine_and_zero || template_integrity ||
               boundary_validation;
    }
    bool operator==(const HardeningConfig&) const = default;
};

// Parses a comma separated flag list ("canaries,checked_copy"); "none" and ""
// yield the vulnerable default. Unknown names raise EUSAGE.
HardeningConfig parse_hardening(std::string_view list);
std::string hardening_to_string(const HardeningConfig& h);

class LinearMemory {
public:
    explicit LinearMemory(std::uint32_t size = kMemorySize);

    std::uint32_t size() const { return static_cast<std::uint32_t>(bytes_.size()); }

    Bytes read(std::uint32_t addr, std::uint32_t len) const;
    void write(std::uint32_t addr, ByteView data);
    void write(std::uint32_t addr, std::string_view text) { write(addr, ByteView(to_bytes(text))); }
    void fill(std::uint32_t addr, std::uint32_t len, std::uint8_t value);

    std::uint32_t load_u32(std::uint32_t addr) const;
    void store_u32(std::uint32_t addr, std::uint32_t value);

    // Bytes up to the first NUL, scanning at most `max` bytes.
    std::string read_cstring(std::uint32_t addr, std::uint32_t max) const;

    ByteView view() const { return bytes_; }

    bool operator==(const LinearMemory&) const = default;

private:
    void check_range(std::uint32_t addr, std::uint64_t len) const;

    Bytes bytes_;
};

struct LocalDecl {
    std::string name;
    std::uint32_t length = 0;
    bool attacker_writable = false;
};

struct FrameLocal {
    std::string name;
    std::uint32_t offset = 0;
    std::uint32_t length = 0;
};

struct StackFrame {
    std::uint32_t base = 0;
    std::uint32_t size = 0;
    std::vector<FrameLocal> locals;
    std::optional<std::uint32_t> canary_offset;
    std::uint32_t guard = 0;

    std::uint32_t addr_of(std::string_view local) const;
    const FrameLocal& local(std::string_view name) const;
};

// Lays out a frame directly below `top`. Locals occupy ascending addresses in
// declaration order; with canaries a 4-byte guard follows the first
// attacker-writable local that has a higher local after it. EOOB if the frame
// would cross stack_limit.
StackFrame layout_frame(std::uint32_t top, const std::vector<LocalDecl>& decls, bool canaries);

// Same layout rules for a block of globals at a fixed base address.
StackFrame layout_at(std::uint32_t base, const std::vector<LocalDecl>& decls, bool canaries);

std::uint32_t place_canary(LinearMemory& mem, StackFrame& frame);
bool check_canary(const LinearMemory& mem, const StackFrame& frame);

struct CopyResult {
    std::uint32_t written = 0;
    bool truncated = false;
};

std::uint32_t memcpy_unchecked(LinearMemory& mem, std::uint32_t dst, ByteView src,
                               std::uint32_t declared_capacity);
CopyResult memcpy_checked(LinearMemory& mem, std::uint32_t dst, ByteView src,
                          std::uint32_t declared_capacity);

struct Chunk {
    std::uint32_t addr = 0;
    std::uint32_t size = 0;
    // Allocation count at which a quarantined chunk becomes reusable.
    std::uint64_t release_at = 0;

    bool operator==(const Chunk&) const = default;
};

// Free-list heap with most-recently-freed-first reuse. Metadata is kept host
// side; chunks carry no in-band headers.
class Allocator {
public:
    static constexpr std::uint32_t kAlign = 16;
    static constexpr std::uint32_t kReuseSlack = 16;
    static constexpr std::uint32_t kQuarantineAllocs = 8;

    explicit Allocator(HardeningConfig config = {});

    std::uint32_t malloc(LinearMemory& mem, std::uint32_t n);
    void free(LinearMemory& mem, std::uint32_t addr);

    bool is_live(std::uint32_t addr) const { return live_.contains(addr); }
    std::optional<std::uint32_t> chunk_size(std::uint32_t addr) const;

    std::uint32_t next_bump() const { return next_bump_; }
    std::uint64_t alloc_count() const { return alloc_count_; }
    const std::vector<Chunk>& free_list() const { return free_list_; }
    const std::map<std::uint32_t, std::uint32_t>& live() const { return live_; }
    const HardeningConfig& config() const { return config_; }

    void serialize(Bytes& out) const;
    static Allocator deserialize(ByteView in, std::size_t& pos, HardeningConfig config);

    bool operator==(const Allocator&) const = default;

private:
    HardeningConfig config_;
    std::uint32_t next_bump_ = RegionMap::heap_base;
    std::uint64_t alloc_count_ = 0;
    std::vector<Chunk> free_list_;
    std::map<std::uint32_t, std::uint32_t> live_;
};

enum class SpecKind : char { Dec = 'd', Hex = 'x', Str = 's', Chr = 'c', Count = 'n' };

struct FormatSpec {
    SpecKind kind;
    std::uint32_t arg_index;
    bool operator==(const FormatSpec&) const = default;
};

using FormatItem = std::variant<std::string, FormatSpec>;

struct FormatProgram {
    std::vector<FormatItem> items;
    std::uint32_t spec_count() const;
};

FormatProgram parse_format(std::string_view fmt);

// Executes a format program against guest memory. %n stores the number of
// bytes emitted so far as a little-endian u32 at the argument address.
std::string mini_printf(LinearMemory& mem, const FormatProgram& prog,
                        std::span<const std::uint32_t> varargs);

// Snapshot files: 16-byte header (magic "LMLAB1", u16 version, u32 size,
// u32 reserved), the raw memory image, then optional allocator metadata.
inline constexpr std::string_view kSnapshotMagic = "LMLAB1";
inline constexpr std::uint16_t kSnapshotVersion = 1;

struct Snapshot {
    LinearMemory memory;
    std::optional<Allocator> allocator;

    bool operator==(const Snapshot&) const = default;
};

Bytes serialize_snapshot(const LinearMemory& mem, const Allocator* alloc);
Snapshot deserialize_snapshot(ByteView data);

void write_snapshot_file(const std::string& path, const LinearMemory& mem, const Allocator* alloc);
Snapshot read_snapshot_file(const std::string& path);

struct ByteRange {
    std::uint32_t first = 0;
    std::uint32_t last = 0;  // inclusive
};

// Maximal runs of differing bytes between two equally sized images.
std::vector<ByteRange> diff_ranges(ByteView a, ByteView b);

}  // namespace wasmlab
