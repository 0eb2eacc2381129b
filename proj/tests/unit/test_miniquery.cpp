#include <gtest/gtest.h>

#include <random>

#include "wasmlab/miniquery.hpp"

using namespace wasmlab;

namespace {

Errc code_of(auto&& fn) {
    try {
        fn();
    } catch (const LabError& e) {
        return e.code();
    }
    ADD_FAILURE() << "no LabError raised";
    return Errc::Usage;
}

Value I(std::int64_t v) { return Value{v}; }

}  // namespace

TEST(prepare, slot_counts)
{
    EXPECT_EQ(prepare("SELECT name FROM users WHERE id = ?").slot_count, 1u);
    EXPECT_EQ(prepare("SELECT 1").slot_count, 0u);
    EXPECT_EQ(prepare("SELECT 1, 'x?' FROM users WHERE name = '?'").slot_count, 0u);
    EXPECT_EQ(count_slots("SELECT '?', ? , '''?'"), 1u);
}

TEST(prepare, syntax_errors_carry_offsets)
{
    EXPECT_EQ(code_of([] { prepare("SELECT FROM WHERE"); }), Errc::Syntax);
    try {
        prepare("SELECT FROM WHERE");
        FAIL();
    } catch (const OffsetError& e) {
        EXPECT_EQ(e.offset(), 7u);
    }
    try {
        prepare("SELECT id FROM users WHERE id = ? garbage");
        FAIL();
    } catch (const OffsetError& e) {
        EXPECT_EQ(e.offset(), 34u);
    }
    EXPECT_EQ(code_of([] { prepare(""); }), Errc::Syntax);
    EXPECT_EQ(code_of([] { prepare("SELECT 'open"); }), Errc::Syntax);
}

TEST(prepare, digest_only_with_integrity)
{
    EXPECT_FALSE(prepare("SELECT 1").digest);
    auto s = prepare("SELECT 1", true);
    ASSERT_TRUE(s.digest);
    EXPECT_EQ(*s.digest, hash_template("SELECT 1"));
}

TEST(hash, fnv1a)
{
    EXPECT_EQ(hash_template(""), 0xcbf29ce484222325ull);
    // Reference FNV-1a over the same bytes.
    auto ref = [](std::string_view s) {
        std::uint64_t h = 14695981039346656037ull;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ull;
        }
        return h;
    };
    EXPECT_EQ(hash_template("SELECT 1"), ref("SELECT 1"));
    EXPECT_EQ(hash_template("SELECT 2"), ref("SELECT 2"));
    EXPECT_NE(hash_template("SELECT 1"), hash_template("SELECT 2"));
    EXPECT_EQ(hash_template("a"), 0xaf63dc4c8601ec8cull);
}

TEST(execute, constant_projection)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT id, name, secret FROM users WHERE id = ?");
    auto r = execute(stmt, "SELECT 1", {}, store);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0], (std::vector<Value>{I(1)}));
    auto s = execute(stmt, "SELECT 1, 'two';", {}, store);
    EXPECT_EQ(s.rows[0], (std::vector<Value>{I(1), Value{std::string("two")}}));
}

TEST(execute, bind_mismatch)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT name FROM users WHERE id = ?");
    EXPECT_EQ(code_of([&] { execute(stmt, stmt.template_text, {I(1), I(2)}, store); }), Errc::BindMismatch);
    EXPECT_EQ(code_of([&] { execute(stmt, stmt.template_text, {}, store); }), Errc::BindMismatch);
}

TEST(execute, integrity_checked_before_evaluation)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT name FROM users WHERE id = ?", true);
    EXPECT_EQ(code_of([&] { execute(stmt, "SELECT 1", {}, store); }), Errc::Integrity);
    // Even a syntactically broken template reports the integrity failure.
    EXPECT_EQ(code_of([&] { execute(stmt, "SELEC", {}, store); }), Errc::Integrity);
    auto r = execute(stmt, stmt.template_text, {I(2)}, store);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0][0], Value{std::string("bob")});
}

TEST(execute, template_reread_is_the_vulnerability)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT name FROM users WHERE id = ?");
    auto r = execute(stmt, "SELECT secret FROM users WHERE id = 0", {}, store);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0][0], Value{std::string("FLAG{id-zero-is-restricted}")});
}

TEST(execute, lookup_errors)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT 1");
    EXPECT_EQ(code_of([&] { execute(stmt, "SELECT id FROM nope", {}, store); }), Errc::NoTable);
    EXPECT_EQ(code_of([&] { execute(stmt, "SELECT nope FROM users", {}, store); }), Errc::NoCol);
    EXPECT_EQ(code_of([&] { execute(stmt, "SELECT id FROM users WHERE nope = 1", {}, store); }), Errc::NoCol);
}

TEST(fixture, load_and_validate)
{
    auto store = load_tables("TABLE t(a,b)\n1\tx\n2\ty\n\n# comment\nTABLE u(c)\nhello\n");
    EXPECT_EQ(store.table("t").rows.size(), 2u);
    EXPECT_EQ(store.table("t").rows[1][0], I(2));
    EXPECT_EQ(store.table("u").rows[0][0], Value{std::string("hello")});
    EXPECT_EQ(code_of([] { load_tables("TABLE t(a,b)\n1\n"); }), Errc::Syntax);
    EXPECT_EQ(code_of([] { load_tables("1\t2\n"); }), Errc::Syntax);
    EXPECT_EQ(code_of([&] { store.table("zzz"); }), Errc::NoTable);

    auto users = default_fixture().table("users");
    EXPECT_EQ(users.columns, (std::vector<std::string>{"id", "name", "secret", "role"}));
    EXPECT_EQ(users.rows[0][0], I(0));
}

// Full-scan oracle for WHERE col = ? over random tables.
TEST(execute, where_matches_full_scan)
{
    std::mt19937 rng(99);
    for (int trial = 0; trial < 40; ++trial) {
        Table t;
        t.columns = {"id", "v"};
        int n = rng() % 30;
        for (int i = 0; i < n; ++i) t.rows.push_back({I(static_cast<int>(rng() % 10) - 3), I(rng() % 100)});
        TableStore store;
        store.add_table("t", t);
        auto stmt = prepare("SELECT id, v FROM t WHERE id = ?");
        for (std::int64_t b = -5; b <= 8; ++b) {
            auto r = execute(stmt, stmt.template_text, {I(b)}, store);
            std::vector<std::vector<Value>> expect;
            for (const auto& row : t.rows)
                if (std::get<std::int64_t>(row[0]) == b) expect.push_back(row);
            EXPECT_EQ(r.rows, expect);
            EXPECT_EQ(r.columns, t.columns);
        }
    }
}

// Bindings are opaque values: quotes and keywords never change the query.
TEST(execute, adversarial_bindings_stay_opaque)
{
    TableStore store;
    Table t;
    t.columns = {"id", "name"};
    const std::vector<std::string> names = {"alice", "x' OR '1'='1", "SELECT 1", "?", "'; DROP", "a,b"};
    for (std::size_t i = 0; i < names.size(); ++i) t.rows.push_back({I(static_cast<std::int64_t>(i)), Value{names[i]}});
    store.add_table("people", t);
    auto stmt = prepare("SELECT id FROM people WHERE name = ?");
    std::mt19937 rng(5);
    const std::string alphabet = "ab' ?,;=-SELECTOR1";
    std::vector<std::string> probes = names;
    for (int i = 0; i < 200; ++i) {
        std::string s;
        for (int k = 0, len = rng() % 12; k < len; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
        probes.push_back(s);
    }
    for (const auto& p : probes) {
        auto r = execute(stmt, stmt.template_text, {Value{p}}, store);
        std::vector<std::vector<Value>> expect;
        for (const auto& row : t.rows)
            if (std::get<std::string>(row[1]) == p) expect.push_back({row[0]});
        EXPECT_EQ(r.rows, expect) << p;
    }
}

TEST(execute, integer_column_vs_text_binding)
{
    auto store = default_fixture();
    auto stmt = prepare("SELECT name FROM users WHERE id = ?");
    EXPECT_TRUE(execute(stmt, stmt.template_text, {Value{std::string("0")}}, store).rows.empty());
    EXPECT_TRUE(execute(stmt, stmt.template_text, {I(-1)}, store).rows.empty());
}
