#include "wasmlab/minitemplate.hpp"

#include <cctype>
#include <limits>

namespace wasmlab {

namespace {

// Recursive descent over one interpolation body. Offsets in errors are
// relative to the whole template source.
class ExprParser {
public:
    ExprParser(std::string_view expr, std::size_t base, const TemplateContext& ctx)
        : s_(expr), base_(base), ctx_(ctx) {}

    std::int64_t parse() {
        auto v = sum();
        skip_ws();
        if (i_ != s_.size()) fail("unexpected '" + std::string(1, s_[i_]) + "'");
        return v;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw OffsetError(Errc::Tpl, base_ + i_, what);
    }

    void skip_ws() {
        while (i_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[i_]))) ++i_;
    }

    bool accept(char c) {
        skip_ws();
        if (i_ < s_.size() && s_[i_] == c) {
            ++i_;
            return true;
        }
        return false;
    }

    static std::int64_t checked(__int128 v, ExprParser* self) {
        if (v > std::numeric_limits<std::int64_t>::max() || v < std::numeric_limits<std::int64_t>::min())
            self->fail("integer overflow");
        return static_cast<std::int64_t>(v);
    }

    std::int64_t sum() {
        auto v = product();
        for (;;) {
            if (accept('+')) v = checked(static_cast<__int128>(v) + product(), this);
            else if (accept('-')) v = checked(static_cast<__int128>(v) - product(), this);
            else return v;
        }
    }

    std::int64_t product() {
        auto v = unary();
        for (;;) {
            if (accept('*')) {
                v = checked(static_cast<__int128>(v) * unary(), this);
            } else if (accept('/')) {
                auto rhs = unary();
                if (rhs == 0) throw OffsetError(Errc::Div0, base_ + i_, "division by zero");
                v = checked(static_cast<__int128>(v) / rhs, this);
            } else {
                return v;
            }
        }
    }

    std::int64_t unary() {
        if (accept('-')) return checked(-static_cast<__int128>(unary()), this);
        if (accept('+')) return unary();
        return primary();
    }

    std::int64_t primary() {
        skip_ws();
        if (i_ >= s_.size()) fail("expected operand");
        if (accept('(')) {
            auto v = sum();
            if (!accept(')')) fail("expected ')'");
            return v;
        }
        char c = s_[i_];
        if (std::isdigit(static_cast<unsigned char>(c))) {
            __int128 v = 0;
            while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) {
                v = v * 10 + (s_[i_++] - '0');
                checked(v, this);
            }
            return static_cast<std::int64_t>(v);
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            auto start = i_;
            while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_')) ++i_;
            auto name = s_.substr(start, i_ - start);
            auto it = ctx_.find(name);
            if (it == ctx_.end()) {
                i_ = start;
                fail("unknown identifier '" + std::string(name) + "'");
            }
            return it->second;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    std::string_view s_;
    std::size_t base_;
    const TemplateContext& ctx_;
    std::size_t i_ = 0;
};

bool is_exec_call(std::string_view expr) {
    auto b = expr.find_first_not_of(" \t\r\n");
    auto e = expr.find_last_not_of(" \t\r\n");
    if (b == std::string_view::npos) return false;
    auto t = expr.substr(b, e - b + 1);
    return t.size() >= 6 && t.substr(0, 5) == "exec(" && t.back() == ')';
}

}  // namespace

RenderReport compile_and_render(std::string_view source, const TemplateContext& context) {
    RenderReport report;
    std::size_t i = 0;
    while (i < source.size()) {
        if (source[i] != '#' || i + 1 >= source.size() || source[i + 1] != '{') {
            report.output.push_back(source[i++]);
            continue;
        }
        std::size_t open = i;
        std::size_t body = i + 2;
        // The body ends at the '}' that balances the opening brace. exec(...)
        // arguments are opaque, so braces inside them still count.
        int depth = 1;
        std::size_t j = body;
        for (; j < source.size(); ++j) {
            if (source[j] == '#' && j + 1 < source.size() && source[j + 1] == '{')
                throw OffsetError(Errc::Tpl, j, "nested interpolation");
            if (source[j] == '{') ++depth;
            else if (source[j] == '}' && --depth == 0) break;
        }
        if (j >= source.size()) throw OffsetError(Errc::Tpl, open, "unterminated interpolation");
        auto expr = source.substr(body, j - body);
        ++report.evaluated_count;
        if (is_exec_call(expr)) {
            report.output += kAceMarker;
            report.ace_triggered = true;
        } else {
            report.output += std::to_string(ExprParser(expr, body, context).parse());
        }
        i = j + 1;
    }
    return report;
}

std::string build_page(std::string_view nonce, std::string_view body) {
    std::string page = "<html><body><script nonce=\"";
    page += nonce;
    page += "\">";
    page += body;
    page += "</script></body></html>";
    return page;
}

}  // namespace wasmlab
