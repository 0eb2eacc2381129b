#include "wasmlab/host.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace wasmlab {

std::string_view to_string(BackendKind k) { return k == BackendKind::Sim ? "sim" : "wasm"; }

std::string_view to_string(Scenario s) {
    switch (s) {
    case Scenario::Sqli: return "sqli";
    case Scenario::Ssti: return "ssti";
    case Scenario::Xsleak: return "xsleak";
    }
    return "?";
}

std::string_view to_string(Variant v) {
    switch (v) {
    case Variant::Bof: return "bof";
    case Variant::Ufs: return "ufs";
    case Variant::Uaf: return "uaf";
    case Variant::Iof: return "iof";
    }
    return "?";
}

BackendKind parse_backend_kind(std::string_view s) {
    if (s == "sim") return BackendKind::Sim;
    if (s == "wasm") return BackendKind::Wasm;
    throw LabError(Errc::Usage, "unknown backend '" + std::string(s) + "'");
}

Scenario parse_scenario(std::string_view s) {
    if (s == "sqli") return Scenario::Sqli;
    if (s == "ssti") return Scenario::Ssti;
    if (s == "xsleak") return Scenario::Xsleak;
    throw LabError(Errc::Usage, "unknown scenario '" + std::string(s) + "'");
}

Variant parse_variant(std::string_view s) {
    if (s == "bof") return Variant::Bof;
    if (s == "ufs") return Variant::Ufs;
    if (s == "uaf") return Variant::Uaf;
    if (s == "iof") return Variant::Iof;
    throw LabError(Errc::Usage, "unknown vector '" + std::string(s) + "'");
}

GuestRuntime::GuestRuntime(HardeningConfig hardening, std::uint64_t seed)
    : hardening_(hardening), allocator_(hardening), rng_state_(seed) {}

std::uint32_t GuestRuntime::copy(std::uint32_t dst, std::uint32_t src, std::uint32_t len,
                                 std::uint32_t capacity) {
    Bytes data = memory_.read(src, len);
    if (hardening_.checked_copy) {
        auto r = memcpy_checked(memory_, dst, data, capacity);
        last_truncated_ = r.truncated;
        return r.written;
    }
    last_truncated_ = false;
    return memcpy_unchecked(memory_, dst, data, capacity);
}

std::uint32_t GuestRuntime::printf(std::uint32_t fmt_addr, std::span<const std::uint32_t> args) {
    auto fmt = memory_.read_cstring(fmt_addr, kRequestCap);
    auto out = mini_printf(memory_, parse_format(fmt), args);
    output_ += out;
    return static_cast<std::uint32_t>(out.size());
}

void GuestRuntime::random_hex(std::uint32_t dst, std::uint32_t n) {
    static constexpr char kHex[] = "0123456789abcdef";
    Bytes out(n);
    for (auto& c : out) {
        // splitmix64
        std::uint64_t z = (rng_state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        z ^= z >> 31;
        c = static_cast<std::uint8_t>(kHex[z & 0xF]);
    }
    memory_.write(dst, out);
}

std::string GuestRuntime::take_output() { return std::exchange(output_, {}); }

namespace {

bool supported(Scenario s, Variant v) {
    switch (s) {
    case Scenario::Sqli: return true;
    case Scenario::Ssti: return v != Variant::Iof;
    case Scenario::Xsleak: return v == Variant::Bof || v == Variant::Uaf;
    }
    return false;
}

// Simulated guest: each export performs the same sequence of runtime calls a
// scenario module would import, over the same fixed layout.
class SimBackend final : public Backend {
public:
    explicit SimBackend(const InstanceSpec& spec) : spec_(spec), rt_(spec.hardening, spec.seed) {
        if (!supported(spec.scenario, spec.variant))
            throw LabError(Errc::Unsupported, std::string(to_string(spec.scenario)) + " has no " +
                                                  std::string(to_string(spec.variant)) + " variant");
        switch (spec.scenario) {
        case Scenario::Sqli: init_sqli(); break;
        case Scenario::Ssti: init_ssti(); break;
        case Scenario::Xsleak: init_xsleak(); break;
        }
    }

    BackendKind kind() const override { return BackendKind::Sim; }
    Scenario scenario() const override { return spec_.scenario; }
    Variant variant() const override { return spec_.variant; }

    std::vector<std::string> exports() const override {
        std::vector<std::string> names;
        for (const auto& [name, e] : exports_) names.push_back(name);
        return names;
    }

    std::uint32_t call_export(std::string_view name, std::span<const std::uint32_t> args) override {
        auto it = exports_.find(std::string(name));
        if (it == exports_.end()) throw LabError(Errc::NoExport, "no export named '" + std::string(name) + "'");
        if (args.size() != it->second.arity)
            throw TrapError(Errc::Args, std::string(name) + " expects " + std::to_string(it->second.arity) +
                                            " argument(s), got " + std::to_string(args.size()));
        try {
            return it->second.fn(args);
        } catch (const TrapError&) {
            throw;
        } catch (const LabError& e) {
            switch (e.code()) {
            case Errc::Oob:
            case Errc::NoNul:
            case Errc::HeapFull:
            case Errc::DoubleFree:
            case Errc::BadFmt:
            case Errc::Args:
            case Errc::Canary:
            case Errc::Size:
                throw TrapError(e.code(), e.detail());
            default:
                throw;
            }
        }
    }

    LinearMemory& memory() override { return rt_.memory(); }
    const LinearMemory& memory() const override { return rt_.memory(); }
    const Allocator& allocator() const override { return rt_.allocator(); }
    std::string take_output() override { return rt_.take_output(); }

private:
    using Fn = std::function<std::uint32_t(std::span<const std::uint32_t>)>;
    struct Export {
        std::size_t arity;
        Fn fn;
    };

    void add(std::string name, std::size_t arity, Fn fn) { exports_[std::move(name)] = {arity, std::move(fn)}; }

    LinearMemory& mem() { return rt_.memory(); }
    bool canaries() const { return spec_.hardening.canaries; }

    void write_cstring(std::uint32_t addr, std::string_view text, std::uint32_t capacity) {
        mem().fill(addr, capacity, 0);
        mem().write(addr, text);
    }

    void stack_chk(const StackFrame& frame) {
        if (canaries() && !check_canary(mem(), frame))
            throw LabError(Errc::Canary, "stack smashing detected in frame at " + std::to_string(frame.base));
    }

    void add_fmt_echo() {
        add("fmt_echo", 3, [this](auto a) {
            std::uint32_t varargs[] = {a[1], a[2]};
            return rt_.printf(a[0], varargs);
        });
    }

    void init_sqli() {
        using namespace layout;
        switch (spec_.variant) {
        case Variant::Bof:
        case Variant::Iof: {
            frame_ = layout_frame(RegionMap::stack_top,
                                  {{"token", kTokenLen, true}, {"query", kQueryLen, false}}, canaries());
            if (frame_->canary_offset) place_canary(mem(), *frame_);
            write_cstring(frame_->addr_of("query"), kDefaultQuery, kQueryLen);
            add("sqli_set_token", 2, [this](auto a) {
                auto n = rt_.copy(frame_->addr_of("token"), a[0], a[1], kTokenLen);
                stack_chk(*frame_);
                return n;
            });
            add("sqli_get_query_addr", 0, [this](auto) { return frame_->addr_of("query"); });
            break;
        }
        case Variant::Ufs:
            write_cstring(kStaticQuery, kDefaultQuery, kQueryLen);
            // The token is logged with the request's words as printf arguments.
            add("sqli_set_token", 4, [this](auto a) {
                std::uint32_t varargs[] = {a[2], a[3]};
                return rt_.printf(a[0], varargs);
            });
            add("sqli_get_query_addr", 0, [](auto) { return kStaticQuery; });
            add_fmt_echo();
            break;
        case Variant::Uaf: {
            auto q = rt_.malloc(kQueryLen);
            write_cstring(q, kDefaultQuery, kQueryLen);
            mem().store_u32(kQueryPtr, q);
            // Refreshing the session releases the query but keeps the pointer.
            add("sqli_set_token", 2, [this](auto a) {
                rt_.free(mem().load_u32(kQueryPtr));
                auto t = rt_.malloc(a[1]);
                rt_.copy(t, a[0], a[1], a[1]);
                return t;
            });
            add("sqli_get_query_addr", 0, [this](auto) { return mem().load_u32(kQueryPtr); });
            break;
        }
        }
    }

    StackFrame nonce_frame() const {
        using namespace layout;
        return layout_frame(RegionMap::stack_top, {{"comment", kCommentLen, true}, {"nonce", kNonceLen, false}},
                            spec_.hardening.canaries);
    }

    void init_ssti() {
        using namespace layout;
        switch (spec_.variant) {
        case Variant::Bof:
            add("ssti_make_nonce", 2, [this](auto a) {
                StackFrame f = nonce_frame();
                if (f.canary_offset) place_canary(mem(), f);
                auto nonce = f.addr_of("nonce");
                rt_.random_hex(nonce, kNonceHexChars);
                mem().fill(nonce + kNonceHexChars, 1, 0);
                if (a[1] > 0) rt_.copy(f.addr_of("comment"), a[0], a[1], kCommentLen);
                stack_chk(f);
                return nonce;
            });
            add("ssti_get_nonce_addr", 0, [this](auto) { return nonce_frame().addr_of("nonce"); });
            break;
        case Variant::Ufs:
            rt_.random_hex(kStaticNonce, kNonceHexChars);
            mem().fill(kStaticNonce + kNonceHexChars, 1, 0);
            add("ssti_make_nonce", 0, [](auto) { return kStaticNonce; });
            add("ssti_get_nonce_addr", 0, [](auto) { return kStaticNonce; });
            add_fmt_echo();
            break;
        case Variant::Uaf:
            add("ssti_make_nonce", 0, [this](auto) {
                auto p = rt_.malloc(kNonceLen);
                rt_.random_hex(p, kNonceHexChars);
                mem().fill(p + kNonceHexChars, 1, 0);
                mem().store_u32(kNoncePtr, p);
                return p;
            });
            add("ssti_free_nonce", 0, [this](auto) {
                rt_.free(mem().load_u32(kNoncePtr));
                return 0u;
            });
            add("ssti_set_comment", 2, [this](auto a) {
                auto t = rt_.malloc(a[1]);
                rt_.copy(t, a[0], a[1], a[1]);
                return t;
            });
            add("ssti_get_nonce_addr", 0, [this](auto) { return mem().load_u32(kNoncePtr); });
            break;
        case Variant::Iof:
            break;
        }
    }

    std::uint32_t secret_addr(std::uint32_t slot) const {
        if (slot >= layout::kSecretSlots)
            throw LabError(Errc::Oob, "secret slot " + std::to_string(slot) + " out of range");
        return block_->addr_of("secrets") + slot * layout::kSecretLen;
    }

    std::uint32_t pattern_addr() {
        return spec_.variant == Variant::Uaf ? mem().load_u32(layout::kPatternPtr) : block_->addr_of("pattern");
    }

    void init_xsleak() {
        using namespace layout;
        block_ = layout_at(kSecrets, {{"secrets", kSecretSlots * kSecretLen, true}, {"pattern", kPatternLen, false}},
                           canaries());
        if (block_->canary_offset) place_canary(mem(), *block_);
        if (spec_.variant == Variant::Uaf) {
            auto p = rt_.malloc(kPatternLen);
            write_cstring(p, kDefaultPattern, kPatternLen);
            mem().store_u32(kPatternPtr, p);
        } else {
            write_cstring(block_->addr_of("pattern"), kDefaultPattern, kPatternLen);
        }
        add("xsleak_store_secret", 3, [this](auto a) -> std::uint32_t {
            auto dst = secret_addr(a[0]);
            if (spec_.variant == Variant::Bof) {
                auto n = rt_.copy(dst, a[1], a[2], kSecretLen);
                stack_chk(*block_);
                return n;
            }
            // Slot copy is bounded; the bug is that storing a secret resets
            // the search state by freeing the pattern without clearing it.
            Bytes data = mem().read(a[1], a[2]);
            memcpy_checked(mem(), dst, data, kSecretLen - 1);
            mem().fill(dst + std::min<std::uint32_t>(a[2], kSecretLen - 1), 1, 0);
            rt_.free(mem().load_u32(kPatternPtr));
            auto t = rt_.malloc(a[2]);
            rt_.copy(t, a[1], a[2], a[2]);
            return t;
        });
        add("xsleak_set_pattern", 2, [this](auto a) {
            Bytes data = mem().read(a[0], a[1]);
            auto dst = pattern_addr();
            auto r = memcpy_checked(mem(), dst, data, kPatternLen - 1);
            mem().fill(dst + r.written, 1, 0);
            return r.written;
        });
        add("xsleak_get_pattern_addr", 0, [this](auto) { return pattern_addr(); });
        add("xsleak_get_secret_addr", 1, [this](auto a) { return secret_addr(a[0]); });
    }

    InstanceSpec spec_;
    GuestRuntime rt_;
    std::optional<StackFrame> frame_;
    std::optional<StackFrame> block_;
    std::map<std::string, Export> exports_;
};

std::uint32_t parse_u32(std::string_view tok) {
    int base = 10;
    if (tok.size() > 2 && tok[0] == '0' && (tok[1] == 'x' || tok[1] == 'X')) {
        base = 16;
        tok.remove_prefix(2);
    }
    std::uint32_t v = 0;
    auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v, base);
    if (ec != std::errc{} || p != tok.data() + tok.size())
        throw LabError(Errc::Usage, "bad number '" + std::string(tok) + "'");
    return v;
}

}  // namespace

std::unique_ptr<Backend> instantiate(BackendKind kind, const InstanceSpec& spec) {
    if (kind == BackendKind::Wasm)
        throw LabError(Errc::Instantiate,
                       "no WebAssembly runtime is linked into this build; guest modules are built and run separately");
    return std::make_unique<SimBackend>(spec);
}

std::uint32_t stage_input(Backend& b, ByteView data) {
    if (data.size() > RegionMap::io_size)
        throw LabError(Errc::Size, "input of " + std::to_string(data.size()) + " bytes exceeds the " +
                                       std::to_string(RegionMap::io_size) + "-byte request cap");
    b.memory().write(RegionMap::io_base, data);
    return RegionMap::io_base;
}

std::string to_hex(ByteView bytes) {
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    out.reserve(bytes.size() * 2);
    for (auto b : bytes) {
        out.push_back(kHex[b >> 4]);
        out.push_back(kHex[b & 0xF]);
    }
    return out;
}

Bytes from_hex(std::string_view hex) {
    if (hex.size() % 2 != 0) throw LabError(Errc::Usage, "odd-length hex string");
    Bytes out;
    for (std::size_t i = 0; i < hex.size(); i += 2) {
        std::uint8_t v = 0;
        auto [p, ec] = std::from_chars(hex.data() + i, hex.data() + i + 2, v, 16);
        if (ec != std::errc{} || p != hex.data() + i + 2)
            throw LabError(Errc::Usage, "bad hex byte '" + std::string(hex.substr(i, 2)) + "'");
        out.push_back(v);
    }
    return out;
}

Script parse_script(std::string_view text, std::string base_dir) {
    Script script;
    script.base_dir = std::move(base_dir);
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    bool have_scenario = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream words(line);
        std::vector<std::string> w;
        for (std::string t; words >> t;) w.push_back(t);
        if (w.empty()) continue;
        auto where = " on line " + std::to_string(lineno);
        if (w[0] == "SCENARIO") {
            if (w.size() < 3 || w.size() > 4) throw LabError(Errc::Usage, "SCENARIO needs name and variant" + where);
            script.spec.scenario = parse_scenario(w[1]);
            script.spec.variant = parse_variant(w[2]);
            if (w.size() == 4) script.spec.hardening = parse_hardening(w[3]);
            have_scenario = true;
        } else if (w[0] == "CALL") {
            if (w.size() < 2) throw LabError(Errc::Usage, "CALL needs an export name" + where);
            ScriptCall c{w[1], {}};
            for (std::size_t i = 2; i < w.size(); ++i) c.args.push_back(parse_u32(w[i]));
            script.steps.emplace_back(std::move(c));
        } else if (w[0] == "WRITE") {
            if (w.size() != 3) throw LabError(Errc::Usage, "WRITE needs addr and hexbytes" + where);
            script.steps.emplace_back(ScriptWrite{parse_u32(w[1]), from_hex(w[2])});
        } else if (w[0] == "EXPECT_SNAPSHOT") {
            if (w.size() != 2) throw LabError(Errc::Usage, "EXPECT_SNAPSHOT needs a file" + where);
            script.steps.emplace_back(ScriptExpectSnapshot{w[1]});
        } else {
            throw LabError(Errc::Usage, "unknown directive '" + w[0] + "'" + where);
        }
    }
    if (!have_scenario) throw LabError(Errc::Usage, "script has no SCENARIO line");
    return script;
}

Script load_script(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LabError(Errc::Usage, "cannot open script " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    auto slash = path.find_last_of('/');
    return parse_script(ss.str(), slash == std::string::npos ? "." : path.substr(0, slash));
}

ScriptRun run_script(Backend& b, const Script& script) {
    ScriptRun run;
    for (const auto& step : script.steps) {
        if (const auto* c = std::get_if<ScriptCall>(&step)) {
            CallRecord rec{c->name, std::nullopt, std::nullopt};
            try {
                rec.value = b.call_export(c->name, c->args);
            } catch (const TrapError& e) {
                rec.trap = e.cause();
            } catch (const LabError& e) {
                rec.trap = e.code();
            }
            run.calls.push_back(std::move(rec));
            run.output.push_back(b.take_output());
        } else if (const auto* w = std::get_if<ScriptWrite>(&step)) {
            b.memory().write(w->addr, w->data);
        } else {
            const auto& e = std::get<ScriptExpectSnapshot>(step);
            std::string path = e.path.starts_with('/') ? e.path : script.base_dir + "/" + e.path;
            std::ifstream f(path, std::ios::binary);
            Bytes expected((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            if (!f.is_open()) run.snapshot_mismatches.push_back(path + ": missing");
            else if (expected != b.snapshot()) run.snapshot_mismatches.push_back(path + ": differs");
        }
    }
    run.final_snapshot = b.snapshot();
    return run;
}

DiffReport diff_outcomes(const Script& script, const BackendFactory& make_a, const BackendFactory& make_b) {
    auto a = make_a(script.spec);
    auto b = make_b(script.spec);
    auto ra = run_script(*a, script);
    auto rb = run_script(*b, script);
    DiffReport report;
    auto describe = [](const CallRecord& r) {
        if (r.trap) return "trap " + std::string(errc_name(*r.trap));
        return r.value ? std::to_string(*r.value) : std::string("none");
    };
    for (std::size_t i = 0; i < std::max(ra.calls.size(), rb.calls.size()); ++i) {
        if (i >= ra.calls.size() || i >= rb.calls.size()) {
            report.return_diffs.push_back("call " + std::to_string(i) + ": missing on one backend");
            continue;
        }
        if (!(ra.calls[i] == rb.calls[i]) || ra.output[i] != rb.output[i])
            report.return_diffs.push_back("call " + std::to_string(i) + " " + ra.calls[i].name + ": " +
                                          describe(ra.calls[i]) + " vs " + describe(rb.calls[i]));
    }
    auto sa = deserialize_snapshot(ra.final_snapshot);
    auto sb = deserialize_snapshot(rb.final_snapshot);
    report.memory_diffs = diff_ranges(sa.memory.view(), sb.memory.view());
    report.metadata_differs = ra.final_snapshot.size() != rb.final_snapshot.size() ||
                              !std::equal(ra.final_snapshot.begin() + 16 + sa.memory.size(), ra.final_snapshot.end(),
                                          rb.final_snapshot.begin() + 16 + sb.memory.size());
    report.identical = report.return_diffs.empty() && report.memory_diffs.empty() && !report.metadata_differs;
    return report;
}

DiffReport diff_outcomes(const Script& script) {
    return diff_outcomes(
        script, [](const InstanceSpec& s) { return instantiate(BackendKind::Sim, s); },
        [](const InstanceSpec& s) { return instantiate(BackendKind::Wasm, s); });
}

}  // namespace wasmlab
