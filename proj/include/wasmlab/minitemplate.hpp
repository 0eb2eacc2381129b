#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>

#include "wasmlab/error.hpp"

namespace wasmlab {

using TemplateContext = std::map<std::string, std::int64_t, std::less<>>;

struct RenderReport {
    std::string output;
    std::uint32_t evaluated_count = 0;
    // Set when an interpolation evaluated the exec(...) sentinel. Nothing is
    // ever executed; the flag stands in for code execution.
    bool ace_triggered = false;
};

inline constexpr std::string_view kAceMarker = "[ACE]";

// Renders `#{expr}` interpolations. Expressions are integer arithmetic over
// + - * / and parentheses, context identifiers, or the exec(...) sentinel.
RenderReport compile_and_render(std::string_view source, const TemplateContext& context = {});

// Splices the nonce verbatim into a script-tag page template. The nonce is
// part of the template source, so any interpolation syntax it carries is
// evaluated by compile_and_render.
std::string build_page(std::string_view nonce, std::string_view body);

}  // namespace wasmlab
