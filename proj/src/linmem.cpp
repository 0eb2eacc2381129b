#include "wasmlab/linmem.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <utility>

namespace wasmlab {

namespace {

void put_u16(Bytes& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(Bytes& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(Bytes& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(ByteView in, std::size_t& pos, int width) {
    if (pos + static_cast<std::size_t>(width) > in.size())
        throw LabError(Errc::Oob, "truncated snapshot");
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) v |= std::uint64_t{in[pos + i]} << (8 * i);
    pos += static_cast<std::size_t>(width);
    return v;
}

std::uint32_t align_up(std::uint32_t n, std::uint32_t a) { return (n + a - 1) / a * a; }

std::string hex_addr(std::uint32_t a) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%x", a);
    return buf;
}

}  // namespace

HardeningConfig parse_hardening(std::string_view list) {
    HardeningConfig h;
    while (!list.empty()) {
        auto comma = list.find(',');
        auto name = list.substr(0, comma);
        list = comma == std::string_view::npos ? std::string_view{} : list.substr(comma + 1);
        if (name.empty() || name == "none") continue;
        if (name == "canaries") h.canaries = true;
        else if (name == "checked_copy") h.checked_copy = true;
        else if (name == "quarantine_and_zero" || name == "quarantine") h.quarantine_and_zero = true;
        else if (name == "template_integrity" || name == "integrity") h.template_integrity = true;
        else if (name == "boundary_validation" || name == "boundary") h.boundary_validation = true;
        else throw LabError(Errc::Usage, "unknown hardening flag '" + std::string(name) + "'");
    }
    return h;
}

std::string hardening_to_string(const HardeningConfig& h) {
    std::string out;
    auto add = [&](bool on, const char* name) {
        if (!on) return;
        if (!out.empty()) out += ',';
        out += name;
    };
    add(h.canaries, "canaries");
    add(h.checked_copy, "checked_copy");
    add(h.quarantine_and_zero, "quarantine_and_zero");
    add(h.template_integrity, "template_integrity");
    add(h.boundary_validation, "boundary_validation");
    return out.empty() ? "none" : out;
}

LinearMemory::LinearMemory(std::uint32_t size) : bytes_(size, 0) {
    if (size == 0 || size % kPageSize != 0)
        throw LabError(Errc::Instantiate, "memory size must be a whole number of pages");
}

void LinearMemory::check_range(std::uint32_t addr, std::uint64_t len) const {
    if (std::uint64_t{addr} + len > bytes_.size())
        throw LabError(Errc::Oob, "access [" + hex_addr(addr) + ", +" + std::to_string(len) +
                                      ") exceeds memory size " + std::to_string(bytes_.size()));
}

Bytes LinearMemory::read(std::uint32_t addr, std::uint32_t len) const {
    check_range(addr, len);
    return Bytes(bytes_.begin() + addr, bytes_.begin() + addr + len);
}

void LinearMemory::write(std::uint32_t addr, ByteView data) {
    check_range(addr, data.size());
    std::copy(data.begin(), data.end(), bytes_.begin() + addr);
}

void LinearMemory::fill(std::uint32_t addr, std::uint32_t len, std::uint8_t value) {
    check_range(addr, len);
    std::fill_n(bytes_.begin() + addr, len, value);
}

std::uint32_t LinearMemory::load_u32(std::uint32_t addr) const {
    check_range(addr, 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{bytes_[addr + i]} << (8 * i);
    return v;
}

void LinearMemory::store_u32(std::uint32_t addr, std::uint32_t value) {
    check_range(addr, 4);
    for (int i = 0; i < 4; ++i) bytes_[addr + i] = static_cast<std::uint8_t>(value >> (8 * i));
}

std::string LinearMemory::read_cstring(std::uint32_t addr, std::uint32_t max) const {
    if (addr > bytes_.size()) throw LabError(Errc::Oob, "string address " + hex_addr(addr));
    std::string out;
    for (std::uint32_t i = 0; i < max; ++i) {
        if (std::uint64_t{addr} + i >= bytes_.size())
            throw LabError(Errc::Oob, "string at " + hex_addr(addr) + " runs off memory");
        auto c = bytes_[addr + i];
        if (c == 0) return out;
        out.push_back(static_cast<char>(c));
    }
    throw LabError(Errc::NoNul, "no NUL within " + std::to_string(max) + " bytes at " + hex_addr(addr));
}

const FrameLocal& StackFrame::local(std::string_view name) const {
    for (const auto& l : locals)
        if (l.name == name) return l;
    throw LabError(Errc::NoExport, "frame has no local '" + std::string(name) + "'");
}

std::uint32_t StackFrame::addr_of(std::string_view name) const { return base + local(name).offset; }

namespace {

StackFrame assign_offsets(const std::vector<LocalDecl>& decls, bool canaries) {
    StackFrame frame;
    std::uint32_t offset = 0;
    for (std::size_t i = 0; i < decls.size(); ++i) {
        frame.locals.push_back({decls[i].name, offset, decls[i].length});
        offset += decls[i].length;
        bool higher_follows = i + 1 < decls.size();
        if (canaries && decls[i].attacker_writable && higher_follows && !frame.canary_offset) {
            frame.canary_offset = offset;
            offset += 4;
        }
    }
    frame.size = align_up(offset, 4);
    return frame;
}

}  // namespace

StackFrame layout_frame(std::uint32_t top, const std::vector<LocalDecl>& decls, bool canaries) {
    StackFrame frame = assign_offsets(decls, canaries);
    if (top < RegionMap::stack_limit + frame.size)
        throw LabError(Errc::Oob, "stack frame of " + std::to_string(frame.size) +
                                      " bytes crosses the stack limit");
    frame.base = top - frame.size;
    return frame;
}

StackFrame layout_at(std::uint32_t base, const std::vector<LocalDecl>& decls, bool canaries) {
    StackFrame frame = assign_offsets(decls, canaries);
    frame.base = base;
    return frame;
}

std::uint32_t place_canary(LinearMemory& mem, StackFrame& frame) {
    if (!frame.canary_offset) throw LabError(Errc::Canary, "frame has no canary slot");
    // Terminator-style guard: low byte NUL, remainder keyed on the frame base.
    frame.guard = ((frame.base * 0x9E3779B1u) & 0xFFFFFF00u) | 0x0Au << 8;
    mem.store_u32(frame.base + *frame.canary_offset, frame.guard);
    return frame.guard;
}

bool check_canary(const LinearMemory& mem, const StackFrame& frame) {
    if (!frame.canary_offset) return true;
    return mem.load_u32(frame.base + *frame.canary_offset) == frame.guard;
}

std::uint32_t memcpy_unchecked(LinearMemory& mem, std::uint32_t dst, ByteView src,
                               std::uint32_t /*declared_capacity*/) {
    mem.write(dst, src);
    return static_cast<std::uint32_t>(src.size());
}

CopyResult memcpy_checked(LinearMemory& mem, std::uint32_t dst, ByteView src,
                          std::uint32_t declared_capacity) {
    CopyResult r;
    r.truncated = src.size() > declared_capacity;
    auto n = std::min<std::size_t>(src.size(), declared_capacity);
    mem.write(dst, src.first(n));
    r.written = static_cast<std::uint32_t>(n);
    return r;
}

Allocator::Allocator(HardeningConfig config) : config_(config) {}

std::optional<std::uint32_t> Allocator::chunk_size(std::uint32_t addr) const {
    auto it = live_.find(addr);
    if (it == live_.end()) return std::nullopt;
    return it->second;
}

std::uint32_t Allocator::malloc(LinearMemory& mem, std::uint32_t n) {
    if (n == 0) throw LabError(Errc::Size, "malloc(0)");
    ++alloc_count_;
    for (auto it = free_list_.begin(); it != free_list_.end(); ++it) {
        if (alloc_count_ <= it->release_at) continue;
        if (n + kReuseSlack >= it->size && n <= it->size) {
            Chunk c = *it;
            free_list_.erase(it);
            live_[c.addr] = c.size;
            return c.addr;
        }
    }
    std::uint32_t size = align_up(n, kAlign);
    if (std::uint64_t{next_bump_} + size > mem.size())
        throw LabError(Errc::HeapFull, "cannot allocate " + std::to_string(n) + " bytes");
    std::uint32_t addr = next_bump_;
    next_bump_ += size;
    live_[addr] = size;
    return addr;
}

void Allocator::free(LinearMemory& mem, std::uint32_t addr) {
    auto it = live_.find(addr);
    if (it == live_.end()) throw LabError(Errc::DoubleFree, "free of non-live chunk " + hex_addr(addr));
    Chunk c{addr, it->second, 0};
    live_.erase(it);
    if (config_.quarantine_and_zero) {
        mem.fill(c.addr, c.size, 0);
        c.release_at = alloc_count_ + kQuarantineAllocs;
    }
    free_list_.insert(free_list_.begin(), c);
}

void Allocator::serialize(Bytes& out) const {
    out.insert(out.end(), {'A', 'L', 'O', 'C'});
    put_u32(out, next_bump_);
    put_u64(out, alloc_count_);
    put_u32(out, static_cast<std::uint32_t>(free_list_.size()));
    for (const auto& c : free_list_) {
        put_u32(out, c.addr);
        put_u32(out, c.size);
        put_u64(out, c.release_at);
    }
    put_u32(out, static_cast<std::uint32_t>(live_.size()));
    for (auto [addr, size] : live_) {
        put_u32(out, addr);
        put_u32(out, size);
    }
}

Allocator Allocator::deserialize(ByteView in, std::size_t& pos, HardeningConfig config) {
    if (pos + 4 > in.size() || !std::equal(in.begin() + pos, in.begin() + pos + 4, "ALOC"))
        throw LabError(Errc::Instantiate, "missing allocator section");
    pos += 4;
    Allocator a(config);
    a.next_bump_ = static_cast<std::uint32_t>(get_le(in, pos, 4));
    a.alloc_count_ = get_le(in, pos, 8);
    auto nfree = get_le(in, pos, 4);
    for (std::uint64_t i = 0; i < nfree; ++i) {
        Chunk c;
        c.addr = static_cast<std::uint32_t>(get_le(in, pos, 4));
        c.size = static_cast<std::uint32_t>(get_le(in, pos, 4));
        c.release_at = get_le(in, pos, 8);
        a.free_list_.push_back(c);
    }
    auto nlive = get_le(in, pos, 4);
    for (std::uint64_t i = 0; i < nlive; ++i) {
        auto addr = static_cast<std::uint32_t>(get_le(in, pos, 4));
        a.live_[addr] = static_cast<std::uint32_t>(get_le(in, pos, 4));
    }
    return a;
}

std::uint32_t FormatProgram::spec_count() const {
    return static_cast<std::uint32_t>(std::count_if(items.begin(), items.end(), [](const auto& i) {
        return std::holds_alternative<FormatSpec>(i);
    }));
}

FormatProgram parse_format(std::string_view fmt) {
    FormatProgram prog;
    std::string literal;
    std::uint32_t next_arg = 0;
    for (std::size_t i = 0; i < fmt.size(); ++i) {
        char c = fmt[i];
        if (c != '%') {
            literal.push_back(c);
            continue;
        }
        if (i + 1 >= fmt.size()) throw OffsetError(Errc::BadFmt, i, "dangling '%'");
        char k = fmt[++i];
        if (k == '%') {
            literal.push_back('%');
            continue;
        }
        switch (k) {
        case 'd': case 'x': case 's': case 'c': case 'n':
            break;
        default:
            throw OffsetError(Errc::BadFmt, i - 1, std::string("unknown specifier '%") + k + "'");
        }
        if (!literal.empty()) prog.items.emplace_back(std::exchange(literal, {}));
        prog.items.emplace_back(FormatSpec{static_cast<SpecKind>(k), next_arg++});
    }
    if (!literal.empty()) prog.items.emplace_back(std::move(literal));
    return prog;
}

std::string mini_printf(LinearMemory& mem, const FormatProgram& prog,
                        std::span<const std::uint32_t> varargs) {
    std::string out;
    for (const auto& item : prog.items) {
        if (const auto* lit = std::get_if<std::string>(&item)) {
            out += *lit;
            continue;
        }
        const auto& spec = std::get<FormatSpec>(item);
        if (spec.arg_index >= varargs.size())
            throw LabError(Errc::Args, "format needs argument " + std::to_string(spec.arg_index) +
                                           " but only " + std::to_string(varargs.size()) + " given");
        std::uint32_t arg = varargs[spec.arg_index];
        switch (spec.kind) {
        case SpecKind::Dec:
            out += std::to_string(static_cast<std::int32_t>(arg));
            break;
        case SpecKind::Hex: {
            char buf[16];
            std::snprintf(buf, sizeof buf, "%x", arg);
            out += buf;
            break;
        }
        case SpecKind::Chr:
            out.push_back(static_cast<char>(arg & 0xFF));
            break;
        case SpecKind::Str:
            out += mem.read_cstring(arg, mem.size() - std::min(arg, mem.size()));
            break;
        case SpecKind::Count:
            mem.store_u32(arg, static_cast<std::uint32_t>(out.size()));
            break;
        }
    }
    return out;
}

Bytes serialize_snapshot(const LinearMemory& mem, const Allocator* alloc) {
    Bytes out;
    out.reserve(16 + mem.size() + 256);
    out.insert(out.end(), kSnapshotMagic.begin(), kSnapshotMagic.end());
    put_u16(out, kSnapshotVersion);
    put_u32(out, mem.size());
    put_u32(out, 0);
    out.insert(out.end(), mem.view().begin(), mem.view().end());
    if (alloc) alloc->serialize(out);
    return out;
}

Snapshot deserialize_snapshot(ByteView data) {
    if (data.size() < 16 || !std::equal(kSnapshotMagic.begin(), kSnapshotMagic.end(), data.begin()))
        throw LabError(Errc::Instantiate, "not a snapshot (bad magic)");
    std::size_t pos = kSnapshotMagic.size();
    auto version = get_le(data, pos, 2);
    if (version != kSnapshotVersion)
        throw LabError(Errc::Instantiate, "unsupported snapshot version " + std::to_string(version));
    auto size = static_cast<std::uint32_t>(get_le(data, pos, 4));
    pos += 4;
    if (pos + size > data.size()) throw LabError(Errc::Instantiate, "snapshot image truncated");
    Snapshot snap{LinearMemory(size), std::nullopt};
    snap.memory.write(0, data.subspan(pos, size));
    pos += size;
    if (pos < data.size()) snap.allocator = Allocator::deserialize(data, pos, {});
    if (pos != data.size()) throw LabError(Errc::Instantiate, "trailing bytes in snapshot");
    return snap;
}

void write_snapshot_file(const std::string& path, const LinearMemory& mem, const Allocator* alloc) {
    auto bytes = serialize_snapshot(mem, alloc);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw LabError(Errc::Usage, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Snapshot read_snapshot_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw LabError(Errc::Usage, "cannot open snapshot " + path);
    Bytes bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_snapshot(bytes);
}

std::vector<ByteRange> diff_ranges(ByteView a, ByteView b) {
    std::vector<ByteRange> out;
    auto n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (a[i] == b[i]) continue;
        auto idx = static_cast<std::uint32_t>(i);
        if (!out.empty() && out.back().last + 1 == idx) out.back().last = idx;
        else out.push_back({idx, idx});
    }
    if (a.size() != b.size()) {
        auto first = static_cast<std::uint32_t>(n);
        out.push_back({first, static_cast<std::uint32_t>(std::max(a.size(), b.size()) - 1)});
    }
    return out;
}

}  // namespace wasmlab
