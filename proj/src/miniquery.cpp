#include "wasmlab/miniquery.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace wasmlab {

namespace {

enum class Tok { Ident, Keyword, Int, Str, Comma, Eq, Slot, Semi, End };

struct Token {
    Tok kind;
    std::string text;
    std::size_t offset;
    std::int64_t ival = 0;
};

bool iequals(std::string_view a, std::string_view b) {
    return a.size() == b.size() && std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
               return std::toupper(static_cast<unsigned char>(x)) ==
                      std::toupper(static_cast<unsigned char>(y));
           });
}

bool is_keyword(std::string_view w) {
    return iequals(w, "SELECT") || iequals(w, "FROM") || iequals(w, "WHERE");
}

std::vector<Token> tokenize(std::string_view s) {
    std::vector<Token> out;
    std::size_t i = 0;
    auto isid = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    while (i < s.size()) {
        char c = s[i];
        if (std::isspace(static_cast<unsigned char>(c))) {
            ++i;
            continue;
        }
        std::size_t start = i;
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (i < s.size() && isid(s[i])) ++i;
            std::string word(s.substr(start, i - start));
            out.push_back({is_keyword(word) ? Tok::Keyword : Tok::Ident, word, start});
        } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                   (c == '-' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
            ++i;
            while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
            if (i < s.size() && isid(s[i])) throw OffsetError(Errc::Syntax, start, "malformed number");
            Token t{Tok::Int, std::string(s.substr(start, i - start)), start};
            auto [p, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.ival);
            if (ec != std::errc{}) throw OffsetError(Errc::Syntax, start, "integer out of range");
            out.push_back(std::move(t));
        } else if (c == '\'') {
            std::string lit;
            ++i;
            for (;;) {
                if (i >= s.size()) throw OffsetError(Errc::Syntax, start, "unterminated string literal");
                if (s[i] == '\'') {
                    if (i + 1 < s.size() && s[i + 1] == '\'') {
                        lit.push_back('\'');
                        i += 2;
                        continue;
                    }
                    ++i;
                    break;
                }
                lit.push_back(s[i++]);
            }
            out.push_back({Tok::Str, lit, start});
        } else {
            Tok k;
            switch (c) {
            case ',': k = Tok::Comma; break;
            case '=': k = Tok::Eq; break;
            case '?': k = Tok::Slot; break;
            case ';': k = Tok::Semi; break;
            default: throw OffsetError(Errc::Syntax, start, std::string("unexpected character '") + c + "'");
            }
            ++i;
            out.push_back({k, std::string(1, c), start});
        }
    }
    out.push_back({Tok::End, "", s.size()});
    return out;
}

struct Operand {
    enum class Kind { Column, Const, Slot } kind;
    std::string name;
    Value value;
    std::uint32_t slot = 0;
};

struct Query {
    std::vector<Operand> projection;
    std::optional<std::string> table;
    std::optional<std::string> where_column;
    std::optional<Operand> where_value;
    std::uint32_t slots = 0;
};

class Parser {
public:
    explicit Parser(std::string_view sql) : toks_(tokenize(sql)) {}

    Query parse() {
        Query q;
        expect_keyword("SELECT");
        do {
            q.projection.push_back(projection_item());
        } while (accept(Tok::Comma));
        if (accept_keyword("FROM")) {
            q.table = ident();
            if (accept_keyword("WHERE")) {
                q.where_column = ident();
                expect(Tok::Eq, "'='");
                q.where_value = rhs(q);
            }
        }
        accept(Tok::Semi);
        if (peek().kind != Tok::End) fail("unexpected token '" + peek().text + "'");
        return q;
    }

private:
    const Token& peek() const { return toks_[pos_]; }

    [[noreturn]] void fail(const std::string& what) const {
        throw OffsetError(Errc::Syntax, peek().offset, what);
    }

    bool accept(Tok k) {
        if (peek().kind != k) return false;
        ++pos_;
        return true;
    }

    bool accept_keyword(std::string_view kw) {
        if (peek().kind != Tok::Keyword || !iequals(peek().text, kw)) return false;
        ++pos_;
        return true;
    }

    void expect(Tok k, const char* what) {
        if (!accept(k)) fail(std::string("expected ") + what);
    }

    void expect_keyword(std::string_view kw) {
        if (!accept_keyword(kw)) fail("expected " + std::string(kw));
    }

    std::string ident() {
        if (peek().kind != Tok::Ident) fail("expected identifier");
        return toks_[pos_++].text;
    }

    std::optional<Value> constant() {
        if (peek().kind == Tok::Int) return Value{toks_[pos_++].ival};
        if (peek().kind == Tok::Str) return Value{toks_[pos_++].text};
        return std::nullopt;
    }

    Operand projection_item() {
        if (peek().kind == Tok::Ident) {
            auto name = ident();
            return {Operand::Kind::Column, name, {}};
        }
        auto text = peek().text;
        if (auto v = constant()) return {Operand::Kind::Const, text, *v};
        fail("expected column or constant");
    }

    Operand rhs(Query& q) {
        if (accept(Tok::Slot)) {
            Operand o{Operand::Kind::Slot, "?", {}};
            o.slot = q.slots++;
            return o;
        }
        auto text = peek().text;
        if (auto v = constant()) return {Operand::Kind::Const, text, *v};
        fail("expected '?' or constant");
    }

    std::vector<Token> toks_;
    std::size_t pos_ = 0;
};

Value parse_field(const std::string& f) {
    std::int64_t v = 0;
    auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (!f.empty() && ec == std::errc{} && p == f.data() + f.size()) return v;
    return f;
}

}  // namespace

std::string value_to_string(const Value& v) {
    if (const auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
    return std::get<std::string>(v);
}

std::optional<std::size_t> Table::column_index(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i)
        if (iequals(columns[i], name)) return i;
    return std::nullopt;
}

void TableStore::add_table(std::string name, Table table) {
    for (const auto& row : table.rows)
        if (row.size() != table.columns.size())
            throw LabError(Errc::Syntax, "row arity mismatch in table " + name);
    tables_[std::move(name)] = std::move(table);
}

const Table& TableStore::table(std::string_view name) const {
    auto it = tables_.find(name);
    if (it == tables_.end()) throw LabError(Errc::NoTable, "no such table: " + std::string(name));
    return it->second;
}

TableStore load_tables(std::string_view text) {
    TableStore store;
    std::optional<std::pair<std::string, Table>> current;
    auto flush = [&] {
        if (current) store.add_table(current->first, std::move(current->second));
        current.reset();
    };
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (line.rfind("TABLE ", 0) == 0) {
            flush();
            auto open = line.find('('), close = line.rfind(')');
            if (open == std::string::npos || close == std::string::npos || close < open)
                throw LabError(Errc::Syntax, "bad TABLE header on line " + std::to_string(lineno));
            std::string name = line.substr(6, open - 6);
            name.erase(std::remove_if(name.begin(), name.end(), ::isspace), name.end());
            Table t;
            std::istringstream cols(line.substr(open + 1, close - open - 1));
            std::string col;
            while (std::getline(cols, col, ',')) {
                col.erase(std::remove_if(col.begin(), col.end(), ::isspace), col.end());
                t.columns.push_back(col);
            }
            current.emplace(name, std::move(t));
            continue;
        }
        if (!current) throw LabError(Errc::Syntax, "row before TABLE header on line " + std::to_string(lineno));
        std::vector<Value> row;
        std::istringstream fields(line);
        std::string f;
        while (std::getline(fields, f, '\t')) row.push_back(parse_field(f));
        if (row.size() != current->second.columns.size())
            throw LabError(Errc::Syntax, "row arity mismatch on line " + std::to_string(lineno));
        current->second.rows.push_back(std::move(row));
    }
    flush();
    return store;
}

TableStore load_tables_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw LabError(Errc::NoTable, "cannot open fixture " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return load_tables(ss.str());
}

TableStore default_fixture() {
    return load_tables(
        "TABLE users(id,name,secret,role)\n"
        "0\tadmin\tFLAG{id-zero-is-restricted}\troot\n"
        "1\talice\talice-7f3a\tuser\n"
        "2\tbob\tbob-19c2\tuser\n"
        "3\tcarol\tcarol-55d0\tuser\n");
}

std::uint64_t hash_template(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

std::uint32_t count_slots(std::string_view sql) {
    std::uint32_t n = 0;
    bool in_literal = false;
    std::size_t literal_start = 0;
    for (std::size_t i = 0; i < sql.size(); ++i) {
        char c = sql[i];
        if (in_literal) {
            if (c == '\'') {
                if (i + 1 < sql.size() && sql[i + 1] == '\'') ++i;
                else in_literal = false;
            }
        } else if (c == '\'') {
            in_literal = true;
            literal_start = i;
        } else if (c == '?') {
            ++n;
        }
    }
    if (in_literal) throw OffsetError(Errc::Syntax, literal_start, "unterminated string literal");
    return n;
}

PreparedStatement prepare(std::string_view sql, bool integrity) {
    auto q = Parser(sql).parse();
    PreparedStatement stmt;
    stmt.template_text = std::string(sql);
    stmt.slot_count = q.slots;
    if (integrity) stmt.digest = hash_template(sql);
    return stmt;
}

QueryResult execute(const PreparedStatement& stmt, std::string_view template_now,
                    const std::vector<Value>& bindings, const TableStore& store) {
    if (stmt.digest && hash_template(template_now) != *stmt.digest)
        throw LabError(Errc::Integrity, "query template changed since prepare");
    auto q = Parser(template_now).parse();
    if (q.slots != bindings.size())
        throw LabError(Errc::BindMismatch, "template has " + std::to_string(q.slots) +
                                               " parameter(s) but " + std::to_string(bindings.size()) +
                                               " binding(s) were supplied");
    QueryResult r;
    for (const auto& p : q.projection) r.columns.push_back(p.name);

    if (!q.table) {
        std::vector<Value> row;
        for (const auto& p : q.projection) {
            if (p.kind == Operand::Kind::Column)
                throw LabError(Errc::NoCol, "column '" + p.name + "' without FROM");
            row.push_back(p.value);
        }
        r.rows.push_back(std::move(row));
        return r;
    }

    const Table& t = store.table(*q.table);
    std::vector<std::optional<std::size_t>> proj_idx;
    for (const auto& p : q.projection) {
        if (p.kind != Operand::Kind::Column) {
            proj_idx.push_back(std::nullopt);
            continue;
        }
        auto idx = t.column_index(p.name);
        if (!idx) throw LabError(Errc::NoCol, "no such column: " + p.name);
        proj_idx.push_back(idx);
    }
    std::optional<std::size_t> where_idx;
    Value where_value;
    if (q.where_column) {
        where_idx = t.column_index(*q.where_column);
        if (!where_idx) throw LabError(Errc::NoCol, "no such column: " + *q.where_column);
        where_value = q.where_value->kind == Operand::Kind::Slot ? bindings[q.where_value->slot]
                                                                 : q.where_value->value;
    }
    for (const auto& row : t.rows) {
        if (where_idx && row[*where_idx] != where_value) continue;
        std::vector<Value> out;
        for (std::size_t i = 0; i < proj_idx.size(); ++i)
            out.push_back(proj_idx[i] ? row[*proj_idx[i]] : q.projection[i].value);
        r.rows.push_back(std::move(out));
    }
    return r;
}

}  // namespace wasmlab
