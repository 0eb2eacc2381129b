#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace wasmlab {

// Error codes surfaced by every layer of the lab. Names are stable and appear
// verbatim in JSON reports and HTTP error bodies.
enum class Errc : std::uint8_t {
    Oob,
    NoNul,
    HeapFull,
    DoubleFree,
    BadFmt,
    Args,
    Canary,
    Syntax,
    BindMismatch,
    Integrity,
    NoTable,
    NoCol,
    Tpl,
    Div0,
    Regex,
    Instantiate,
    NoExport,
    Trap,
    Forbidden,
    Boundary,
    Size,
    Groom,
    Ambiguous,
    Exhausted,
    Unsupported,
    Usage,
};

constexpr std::string_view errc_name(Errc c) noexcept {
    switch (c) {
    case Errc::Oob: return "EOOB";
    case Errc::NoNul: return "ENONUL";
    case Errc::HeapFull: return "EHEAPFULL";
    case Errc::DoubleFree: return "EDOUBLEFREE";
    case Errc::BadFmt: return "EBADFMT";
    case Errc::Args: return "EARGS";
    case Errc::Canary: return "ECANARY";
    case Errc::Syntax: return "ESYNTAX";
    case Errc::BindMismatch: return "EBINDMISMATCH";
    case Errc::Integrity: return "EINTEGRITY";
    case Errc::NoTable: return "ENOTABLE";
    case Errc::NoCol: return "ENOCOL";
    case Errc::Tpl: return "ETPL";
    case Errc::Div0: return "EDIV0";
    case Errc::Regex: return "EREGEX";
    case Errc::Instantiate: return "EINSTANTIATE";
    case Errc::NoExport: return "ENOEXPORT";
    case Errc::Trap: return "ETRAP";
    case Errc::Forbidden: return "EFORBIDDEN";
    case Errc::Boundary: return "EBOUNDARY";
    case Errc::Size: return "ESIZE";
    case Errc::Groom: return "EGROOM";
    case Errc::Ambiguous: return "EAMBIGUOUS";
    case Errc::Exhausted: return "EEXHAUSTED";
    case Errc::Unsupported: return "EUNSUPPORTED";
    case Errc::Usage: return "EUSAGE";
    }
    return "EUNKNOWN";
}

class LabError : public std::runtime_error {
public:
    LabError(Errc code, const std::string& detail)
        : std::runtime_error(std::string(errc_name(code)) + ": " + detail), code_(code), detail_(detail) {}

    Errc code() const noexcept { return code_; }
    // Message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    Errc code_;
    std::string detail_;
};

// Parse/syntax failures that carry the byte offset of the first bad token.
class OffsetError : public LabError {
public:
    OffsetError(Errc code, std::size_t offset, const std::string& detail)
        : LabError(code, detail + " at offset " + std::to_string(offset)), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

}  // namespace wasmlab
