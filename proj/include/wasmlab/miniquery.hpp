#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "wasmlab/error.hpp"

namespace wasmlab {

using Value = std::variant<std::int64_t, std::string>;

std::string value_to_string(const Value& v);

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Value>> rows;

    std::optional<std::size_t> column_index(std::string_view name) const;
};

class TableStore {
public:
    void add_table(std::string name, Table table);
    const Table& table(std::string_view name) const;
    bool has_table(std::string_view name) const { return tables_.contains(std::string(name)); }
    const std::map<std::string, Table, std::less<>>& tables() const { return tables_; }

private:
    std::map<std::string, Table, std::less<>> tables_;
};

// Fixture format: blocks of "TABLE name(col,...)" followed by one
// tab-separated row per line. Blank lines and '#' comments are skipped.
// Fields that parse fully as integers become integers.
TableStore load_tables(std::string_view text);
TableStore load_tables_file(const std::string& path);

// users(id, name, secret, role) with the restricted account at id 0.
TableStore default_fixture();

struct QueryResult {
    std::vector<std::string> columns;
    std::vector<std::vector<Value>> rows;

    bool operator==(const QueryResult&) const = default;
};

std::uint64_t hash_template(std::string_view text);

struct PreparedStatement {
    std::string template_text;
    std::uint32_t slot_count = 0;
    std::optional<std::uint64_t> digest;
};

PreparedStatement prepare(std::string_view sql, bool integrity = false);

// Parses `template_now` (the text currently in guest memory, not the text
// seen at prepare time), binds positionally and evaluates.
QueryResult execute(const PreparedStatement& stmt, std::string_view template_now,
                    const std::vector<Value>& bindings, const TableStore& store);

// Counts '?' placeholders outside single-quoted literals. ESYNTAX on an
// unterminated literal.
std::uint32_t count_slots(std::string_view sql);

}  // namespace wasmlab
