#include "wasmlab/regexlite.hpp"

#include <cctype>
#include <type_traits>
#include <utility>

namespace wasmlab {

namespace {

RegexNode node(RegexKind kind, char literal = 0) {
    RegexNode n;
    n.kind = kind;
    n.literal = literal;
    return n;
}

constexpr std::string_view kMeta = "()+*{}.^$";
constexpr std::uint32_t kMaxRepeat = 100000;

class Parser {
public:
    explicit Parser(std::string_view p) : p_(p) {}

    RegexAst parse() {
        RegexAst ast;
        if (accept('^')) ast.root.children.push_back(node(RegexKind::AnchorStart));
        terms(ast.root.children, /*in_group=*/false);
        if (accept('$')) ast.root.children.push_back(node(RegexKind::AnchorEnd));
        if (i_ != p_.size()) {
            if (p_[i_] == ')') fail("unbalanced ')'");
            fail(std::string("unexpected '") + p_[i_] + "'");
        }
        return ast;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw OffsetError(Errc::Regex, i_, what);
    }

    bool accept(char c) {
        if (i_ < p_.size() && p_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }

    void terms(std::vector<RegexNode>& out, bool in_group) {
        while (i_ < p_.size()) {
            char c = p_[i_];
            if (c == ')') {
                if (!in_group) fail("unbalanced ')'");
                return;
            }
            if (c == '$') {
                if (in_group || i_ + 1 != p_.size()) fail("'$' is only allowed at the end");
                return;
            }
            out.push_back(term());
        }
    }

    RegexNode term() {
        RegexNode atom_node = atom();
        if (i_ >= p_.size()) return atom_node;
        RegexNode q;
        if (accept('+')) {
            q.kind = RegexKind::Plus;
        } else if (accept('*')) {
            q.kind = RegexKind::Star;
        } else if (p_[i_] == '{') {
            q.kind = RegexKind::RepeatExact;
            q.count = repeat_count();
        } else {
            return atom_node;
        }
        q.children.push_back(std::move(atom_node));
        if (i_ < p_.size() && (p_[i_] == '+' || p_[i_] == '*' || p_[i_] == '{'))
            fail("bad repetition: quantifier follows quantifier");
        return q;
    }

    std::uint32_t repeat_count() {
        auto start = i_++;
        std::uint64_t n = 0;
        std::size_t digits = 0;
        while (i_ < p_.size() && std::isdigit(static_cast<unsigned char>(p_[i_]))) {
            n = n * 10 + static_cast<std::uint64_t>(p_[i_++] - '0');
            if (n > kMaxRepeat) {
                i_ = start;
                fail("bad repetition: count too large");
            }
            ++digits;
        }
        if (digits == 0 || !accept('}')) {
            i_ = start;
            fail("bad repetition: expected {n}");
        }
        if (n == 0) {
            i_ = start;
            fail("bad repetition: count must be at least 1");
        }
        return static_cast<std::uint32_t>(n);
    }

    RegexNode atom() {
        char c = p_[i_];
        if (c == '(') {
            auto open = i_++;
            RegexNode g = node(RegexKind::Group);
            std::vector<RegexNode> inner;
            terms(inner, /*in_group=*/true);
            if (!accept(')')) {
                i_ = open;
                fail("unbalanced '('");
            }
            if (inner.size() == 1) {
                g.children.push_back(std::move(inner.front()));
            } else {
                RegexNode cat = node(RegexKind::Concat);
                cat.children = std::move(inner);
                g.children.push_back(std::move(cat));
            }
            return g;
        }
        if (c == '.') {
            ++i_;
            return node(RegexKind::Dot);
        }
        if (c == '+' || c == '*' || c == '{') fail("bad repetition: nothing to repeat");
        if (kMeta.find(c) != std::string_view::npos) fail(std::string("unexpected '") + c + "'");
        ++i_;
        return node(RegexKind::Literal, c);
    }

    std::string_view p_;
    std::size_t i_ = 0;
};

void emit(const RegexNode& n, std::string& out) {
    switch (n.kind) {
    case RegexKind::Literal: out.push_back(n.literal); break;
    case RegexKind::Dot: out.push_back('.'); break;
    case RegexKind::AnchorStart: out.push_back('^'); break;
    case RegexKind::AnchorEnd: out.push_back('$'); break;
    case RegexKind::Concat:
        for (const auto& c : n.children) emit(c, out);
        break;
    case RegexKind::Group:
        out.push_back('(');
        emit(n.children.front(), out);
        out.push_back(')');
        break;
    case RegexKind::Plus:
        emit(n.children.front(), out);
        out.push_back('+');
        break;
    case RegexKind::Star:
        emit(n.children.front(), out);
        out.push_back('*');
        break;
    case RegexKind::RepeatExact:
        emit(n.children.front(), out);
        out += "{" + std::to_string(n.count) + "}";
        break;
    }
}

// Non-owning callable reference; continuations only live for the duration
// of the call that receives them.
class Cont {
public:
    template <class F, class = std::enable_if_t<!std::is_same_v<std::decay_t<F>, Cont>>>
    Cont(F&& f) : obj_(static_cast<void*>(&f)), fn_([](void* o, std::size_t p) {
                      return (*static_cast<std::remove_reference_t<F>*>(o))(p);
                  }) {}

    bool operator()(std::size_t pos) const { return fn_(obj_, pos); }

private:
    void* obj_;
    bool (*fn_)(void*, std::size_t);
};

class Matcher {
public:
    Matcher(std::string_view subject, std::uint64_t budget) : s_(subject), budget_(budget) {}

    bool match(const RegexNode& n, std::size_t pos, Cont k) {
        if (exceeded_) return false;
        if (steps_ >= budget_) {
            exceeded_ = true;
            return false;
        }
        ++steps_;
        switch (n.kind) {
        case RegexKind::Literal:
            return pos < s_.size() && s_[pos] == n.literal && k(pos + 1);
        case RegexKind::Dot:
            return pos < s_.size() && k(pos + 1);
        case RegexKind::AnchorStart:
            return pos == 0 && k(pos);
        case RegexKind::AnchorEnd:
            return pos == s_.size() && k(pos);
        case RegexKind::Concat:
            return seq(n.children, 0, pos, k);
        case RegexKind::Group:
            return match(n.children.front(), pos, k);
        case RegexKind::Star:
            return star(n.children.front(), pos, k);
        case RegexKind::Plus: {
            const auto& child = n.children.front();
            return match(child, pos, [&](std::size_t p) { return star(child, p, k); });
        }
        case RegexKind::RepeatExact:
            return repeat(n.children.front(), n.count, 0, pos, k);
        }
        return false;
    }

    std::uint64_t steps() const { return steps_; }
    bool exceeded() const { return exceeded_; }

private:
    bool seq(const std::vector<RegexNode>& items, std::size_t i, std::size_t pos, Cont k) {
        if (i == items.size()) return !exceeded_ && k(pos);
        return match(items[i], pos, [&](std::size_t p) { return seq(items, i + 1, p, k); });
    }

    // Greedy; an iteration that consumes nothing ends the loop.
    bool star(const RegexNode& child, std::size_t pos, Cont k) {
        if (match(child, pos, [&](std::size_t p) { return p != pos && star(child, p, k); })) return true;
        return !exceeded_ && k(pos);
    }

    bool repeat(const RegexNode& child, std::uint32_t count, std::uint32_t done, std::size_t pos, Cont k) {
        if (done == count) return !exceeded_ && k(pos);
        return match(child, pos, [&](std::size_t p) { return repeat(child, count, done + 1, p, k); });
    }

    std::string_view s_;
    std::uint64_t budget_;
    std::uint64_t steps_ = 0;
    bool exceeded_ = false;
};

}  // namespace

bool RegexAst::anchored_start() const {
    return !root.children.empty() && root.children.front().kind == RegexKind::AnchorStart;
}

RegexAst parse_regex(std::string_view pattern) { return Parser(pattern).parse(); }

std::string to_pattern(const RegexAst& ast) {
    std::string out;
    emit(ast.root, out);
    return out;
}

MatchOutcome match_steps(const RegexAst& ast, std::string_view subject, StepBudget budget) {
    if (budget.max_steps == 0) throw LabError(Errc::Usage, "step budget must be positive");
    Matcher m(subject, budget.max_steps);
    auto accept = [](std::size_t) { return true; };
    bool matched = false;
    std::size_t last_start = ast.anchored_start() ? 0 : subject.size();
    for (std::size_t start = 0; start <= last_start && !matched && !m.exceeded(); ++start)
        matched = m.match(ast.root, start, accept);
    MatchOutcome out;
    out.budget_exceeded = m.exceeded();
    out.matched = matched && !out.budget_exceeded;
    out.steps = out.budget_exceeded ? budget.max_steps : m.steps();
    return out;
}

}  // namespace wasmlab
