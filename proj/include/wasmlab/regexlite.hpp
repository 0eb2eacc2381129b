#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "wasmlab/error.hpp"

namespace wasmlab {

enum class RegexKind : std::uint8_t {
    Literal,
    Dot,
    Concat,
    Group,
    Plus,
    Star,
    RepeatExact,
    AnchorStart,
    AnchorEnd,
};

struct RegexNode {
    RegexKind kind = RegexKind::Concat;
    char literal = 0;
    std::uint32_t count = 0;  // RepeatExact only
    std::vector<RegexNode> children;

    bool operator==(const RegexNode&) const = default;
};

// The root is always a Concat; anchors appear as its first/last children.
struct RegexAst {
    RegexNode root;

    bool anchored_start() const;
    bool operator==(const RegexAst&) const = default;
};

// Grammar: '^'? term* '$'?, term := atom ('+' | '*' | '{n}')?,
// atom := literal | '.' | '(' term* ')'. EREGEX carries the offset.
RegexAst parse_regex(std::string_view pattern);

// Canonical pattern text for an AST (parse_regex(to_pattern(a)) == a).
std::string to_pattern(const RegexAst& ast);

struct StepBudget {
    std::uint64_t max_steps = 10'000'000;
};

struct MatchOutcome {
    bool matched = false;
    std::uint64_t steps = 0;
    bool budget_exceeded = false;
};

// Naive backtracking search. Each node entry counts one step, retries
// included; nothing is memoized, so nested repetition backtracks
// exponentially. Unanchored patterns are retried at every start offset.
MatchOutcome match_steps(const RegexAst& ast, std::string_view subject, StepBudget budget = {});

}  // namespace wasmlab
