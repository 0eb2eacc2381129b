#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "wasmlab/scenarios.hpp"

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

LabConfig config(Variant v, HardeningConfig h = {}) {
    LabConfig c;
    c.variant = v;
    c.hardening = h;
    return c;
}

HardeningConfig flag(bool HardeningConfig::*f) {
    HardeningConfig h;
    h.*f = true;
    return h;
}

Bytes overflow(std::string_view inject) {
    Bytes b(32, 'A');
    b.insert(b.end(), inject.begin(), inject.end());
    b.push_back(0);
    return b;
}

bool restricted(const QueryResult& r) {
    for (const auto& row : r.rows)
        if (!row.empty() && row[0] == Value{std::int64_t{0}}) return true;
    return false;
}

// Byte ranges that differ from the initial image, outside the request
// staging buffer.
std::vector<ByteRange> diff_outside_io(const ScenarioState& s) {
    auto a = deserialize_snapshot(s.initial_snapshot());
    auto b = deserialize_snapshot(s.snapshot());
    std::vector<ByteRange> out;
    for (auto r : diff_ranges(a.memory.view(), b.memory.view()))
        if (r.last < RegionMap::io_base || r.first >= RegionMap::io_base + RegionMap::io_size) out.push_back(r);
    return out;
}

}  // namespace

TEST(config, parse)
{
    auto c = parse_config("# lab\nvariant = uaf\nhardening = canaries\nquarantine_and_zero=true\nport=9000\n"
                          "planted_secret=abcdefghijklmnopqrstuvwx\ntest_mode=false\n");
    EXPECT_EQ(c.variant, Variant::Uaf);
    EXPECT_TRUE(c.hardening.canaries);
    EXPECT_TRUE(c.hardening.quarantine_and_zero);
    EXPECT_EQ(c.port, 9000);
    EXPECT_FALSE(c.test_mode);
    EXPECT_EQ(c.planted_secret, "abcdefghijklmnopqrstuvwx");
    EXPECT_EQ(code_of([] { parse_config("bogus=1\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("no equals\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("planted_secret=short\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("canaries=maybe\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("port=70000\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("port=80x\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_config("seed=-1\n"); }), Errc::Usage);
    EXPECT_EQ(parse_config("seed=0x5eed\n").seed, 0x5eedu);
}

TEST(narrowing, two_complement)
{
    EXPECT_EQ(narrow_to_i32(std::int64_t{1} << 32), 0);
    EXPECT_EQ(narrow_to_i32((std::int64_t{1} << 32) - 1), -1);
    EXPECT_EQ(narrow_to_i32(std::int64_t{1} << 31), INT32_MIN);
    EXPECT_EQ(narrow_to_i32(-1), -1);
    EXPECT_EQ(narrow_to_i32(42), 42);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 1000; ++i) {
        auto v = static_cast<std::int64_t>(rng());
        auto m = ((v % 4294967296LL) + 4294967296LL) % 4294967296LL;
        EXPECT_EQ(narrow_to_i32(v), m >= 2147483648LL ? m - 4294967296LL : m);
    }
}

TEST(narrowing, js_numbers)
{
    EXPECT_EQ(as_js_number(std::int64_t{1} << 32), std::int64_t{1} << 32);
    EXPECT_EQ(as_js_number((std::int64_t{1} << 53) - 1), (std::int64_t{1} << 53) - 1);
    EXPECT_EQ(as_js_number((std::int64_t{1} << 53) + 1), std::int64_t{1} << 53);
}

TEST(sanitizer, strips_metacharacters)
{
    EXPECT_EQ(sanitize_pattern("^a(.+){21}$"), "a21");
    EXPECT_EQ(sanitize_pattern("alice-7f"), "alice-7f");
}

TEST(sqli, integer_narrowing_bypass)
{
    SqliScenario s(config(Variant::Iof));
    auto r = s.lookup(std::int64_t{1} << 32);
    EXPECT_TRUE(restricted(r));
    EXPECT_TRUE(s.lookup((std::int64_t{1} << 32) - 1).rows.empty());
    EXPECT_EQ(code_of([&] { s.lookup(0); }), Errc::Forbidden);
    auto alice = s.lookup(1);
    ASSERT_EQ(alice.rows.size(), 1u);
    EXPECT_EQ(alice.rows[0][1], Value{std::string("alice")});

    SqliScenario hard(config(Variant::Iof, flag(&HardeningConfig::boundary_validation)));
    EXPECT_EQ(code_of([&] { hard.lookup(std::int64_t{1} << 32); }), Errc::Boundary);
    EXPECT_EQ(code_of([&] { hard.lookup((std::int64_t{1} << 32) - 1); }), Errc::Boundary);
    EXPECT_EQ(code_of([&] { hard.lookup(-5); }), Errc::Boundary);
    EXPECT_EQ(hard.lookup(2).rows.size(), 1u);
}

TEST(sqli, overflow_token_swaps_template)
{
    SqliScenario s(config(Variant::Bof));
    s.set_token(overflow("SELECT 1"));
    EXPECT_EQ(s.current_template(), "SELECT 1");
    auto r = s.lookup(std::nullopt);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0], (std::vector<Value>{Value{std::int64_t{1}}}));
}

TEST(sqli, honest_id_less_lookup_is_bind_mismatch)
{
    SqliScenario s(config(Variant::Bof));
    EXPECT_EQ(code_of([&] { s.lookup(std::nullopt); }), Errc::BindMismatch);
}

TEST(sqli, benign_token_changes_nothing)
{
    SqliScenario s(config(Variant::Bof));
    auto before = s.lookup(1);
    auto out = s.set_token(to_bytes("8bytes!!"));
    EXPECT_EQ(out.value, 8u);
    EXPECT_EQ(s.current_template(), kDefaultQuery);
    EXPECT_EQ(s.lookup(1), before);
    EXPECT_EQ(code_of([&] { s.set_token(Bytes(4097, 'x')); }), Errc::Size);
}

TEST(sqli, canary_abort_keeps_query)
{
    SqliScenario s(config(Variant::Bof, flag(&HardeningConfig::canaries)));
    EXPECT_EQ(code_of([&] { s.set_token(overflow("SELECT 1")); }), Errc::Canary);
    EXPECT_EQ(s.resets(), 1u);
    EXPECT_EQ(s.current_template(), kDefaultQuery);
    EXPECT_TRUE(diff_outside_io(s).empty());
}

TEST(sqli, checked_copy_truncates_token)
{
    SqliScenario s(config(Variant::Bof, flag(&HardeningConfig::checked_copy)));
    auto out = s.set_token(overflow("SELECT 1"));
    EXPECT_TRUE(out.truncated);
    EXPECT_EQ(s.current_template(), kDefaultQuery);
    auto token = s.query_addr() - layout::kTokenLen;
    for (auto r : diff_outside_io(s)) {
        EXPECT_GE(r.first, token);
        EXPECT_LT(r.last, token + layout::kTokenLen);
    }
}

TEST(sqli, integrity_blocks_swapped_template)
{
    SqliScenario s(config(Variant::Bof, flag(&HardeningConfig::template_integrity)));
    s.set_token(overflow("SELECT 1"));
    EXPECT_EQ(code_of([&] { s.lookup(std::nullopt); }), Errc::Integrity);
    EXPECT_EQ(code_of([&] { s.lookup(1); }), Errc::Integrity);
}

TEST(sqli, uaf_token_lands_on_query)
{
    SqliScenario s(config(Variant::Uaf));
    auto q = s.query_addr();
    std::string tpl = "SELECT id, name, secret FROM users WHERE id = 0";
    Bytes payload = to_bytes(tpl);
    payload.push_back(0);
    auto out = s.free_and_reallocate(payload);
    EXPECT_EQ(out.freed_addr, q);
    EXPECT_EQ(out.new_addr, q);
    EXPECT_TRUE(restricted(s.lookup(std::nullopt)));
}

TEST(sqli, format_token_leaks)
{
    SqliScenario s(config(Variant::Ufs));
    auto out = s.set_token(to_bytes("%x-%x"), {0xcafe, 0xbeef});
    EXPECT_EQ(out.output, "cafe-beef");
    EXPECT_EQ(code_of([&] { s.set_token(to_bytes("%x"), {1, 2, 3}); }), Errc::Args);
    EXPECT_EQ(s.echo(to_bytes("%d"), {7}), "7");
    SqliScenario bof(config(Variant::Bof));
    EXPECT_EQ(code_of([&] { bof.echo(to_bytes("x"), {}); }), Errc::Unsupported);
}

TEST(ssti, honest_pages)
{
    for (auto v : {Variant::Bof, Variant::Ufs, Variant::Uaf}) {
        SstiScenario s(config(v));
        for (int i = 0; i < 20; ++i) {
            auto p = s.page();
            EXPECT_EQ(p.nonce.size(), 16u);
            EXPECT_EQ(p.nonce.find_first_not_of("0123456789abcdef"), std::string::npos);
            EXPECT_FALSE(p.render.ace_triggered);
            EXPECT_EQ(p.render.evaluated_count, 0u);
            EXPECT_NE(p.render.output.find(p.nonce), std::string::npos);
        }
    }
}

TEST(ssti, stack_overflow_into_nonce)
{
    SstiScenario s(config(Variant::Bof));
    auto p = s.page(overflow("#{7*7}"));
    EXPECT_NE(p.render.output.find("nonce=\"49\""), std::string::npos);
    auto ace = s.page(overflow("#{exec(id)}"));
    EXPECT_TRUE(ace.render.ace_triggered);

    SstiScenario hard(config(Variant::Bof, flag(&HardeningConfig::canaries)));
    EXPECT_EQ(code_of([&] { hard.page(overflow("#{7*7}")); }), Errc::Canary);
    EXPECT_FALSE(hard.page().render.ace_triggered);
}

TEST(ssti, boundary_validation_rejects_non_hex_nonce)
{
    SstiScenario s(config(Variant::Bof, flag(&HardeningConfig::boundary_validation)));
    EXPECT_EQ(code_of([&] { s.page(overflow("#{7*7}")); }), Errc::Boundary);
    EXPECT_EQ(s.page().nonce.size(), 16u);
}

TEST(ssti, comment_reuses_freed_nonce)
{
    SstiScenario s(config(Variant::Uaf));
    Bytes payload = to_bytes("#{7*7}");
    payload.resize(16, 0);
    auto p = s.page(payload);
    ASSERT_TRUE(p.comment_addr);
    EXPECT_EQ(*p.comment_addr, p.nonce_addr);
    EXPECT_NE(p.render.output.find("49"), std::string::npos);

    SstiScenario hard(config(Variant::Uaf, flag(&HardeningConfig::quarantine_and_zero)));
    auto q = hard.page(payload);
    EXPECT_NE(*q.comment_addr, q.nonce_addr);
    EXPECT_EQ(q.nonce, "");
    EXPECT_EQ(q.render.evaluated_count, 0u);
}

TEST(xsleak, honest_search_is_fast)
{
    XsleakScenario s(config(Variant::Bof));
    auto env = s.search(Requester::Victim);
    ASSERT_TRUE(env.steps);
    EXPECT_LT(*env.steps, 1000u);
    EXPECT_EQ(env.body, "ok");
    EXPECT_EQ(env.status, 200);
}

TEST(xsleak, pattern_overflow_amplifies)
{
    XsleakScenario s(config(Variant::Bof));
    auto plant = [&](const std::string& pattern) {
        Bytes data(32, 'B');
        data.insert(data.end(), pattern.begin(), pattern.end());
        data.push_back(0);
        s.store_secret(Requester::Victim, XsleakScenario::kLastSlot, data);
    };
    plant("^t(.+){21}");
    EXPECT_EQ(s.current_pattern(), "^t(.+){21}");
    auto hit = *s.search(Requester::Victim).steps;
    plant("^q(.+){21}");
    auto miss = *s.search(Requester::Victim).steps;
    EXPECT_LT(miss, 50u);
    EXPECT_GE(hit, 100 * miss);
}

TEST(xsleak, blind_contract)
{
    XsleakScenario s(config(Variant::Bof));
    std::mt19937 rng(3);
    std::vector<std::string> queries = {"^t(.+){21}", "(", "x{0}", "secret", "", "^trust(.*){500}"};
    for (int i = 0; i < 40; ++i) {
        std::string q;
        for (int k = 0, n = rng() % 10; k < n; ++k) q.push_back("tr(.+){}^$1x"[rng() % 12]);
        queries.push_back(q);
    }
    for (auto who : {Requester::Attacker, Requester::Victim})
        for (const auto& q : queries) {
            auto env = s.search(who, q);
            EXPECT_EQ(env.status, 200);
            EXPECT_EQ(env.body, "ok");
        }
}

TEST(xsleak, invalid_pattern_is_instant)
{
    LabConfig c = config(Variant::Bof);
    c.policy.pattern_sanitizer = false;
    XsleakScenario s(c);
    auto env = s.search(Requester::Victim, "(.+");
    EXPECT_EQ(env.body, "ok");
    EXPECT_EQ(*env.steps, 0u);
}

TEST(xsleak, roles)
{
    XsleakScenario s(config(Variant::Bof));
    EXPECT_EQ(code_of([&] { s.store_secret(Requester::Attacker, 0, to_bytes("x")); }), Errc::Forbidden);
    EXPECT_EQ(s.store_secret(Requester::Attacker, XsleakScenario::kAttackerSlot, to_bytes("mine")), 4u);
    EXPECT_EQ(code_of([&] { s.store_secret(Requester::Victim, 9, to_bytes("x")); }), Errc::Trap);
}

TEST(xsleak, canary_guard_before_pattern)
{
    XsleakScenario s(config(Variant::Bof, flag(&HardeningConfig::canaries)));
    EXPECT_EQ(s.pattern_addr(), layout::kPattern + 4);
    Bytes data(32, 'B');
    for (char c : std::string("^t(.+){21}")) data.push_back(static_cast<std::uint8_t>(c));
    data.push_back(0);
    EXPECT_EQ(code_of([&] { s.store_secret(Requester::Victim, 3, data); }), Errc::Canary);
    EXPECT_EQ(s.current_pattern(), kDefaultPattern);
    // The planted secret survives the re-instantiation.
    s.search(Requester::Victim, "trustno1");
    EXPECT_EQ(s.resets(), 1u);
    EXPECT_TRUE(diff_outside_io(s).size() <= 1);
}

// With hardening off, honest traffic never produces an exploit observable.
TEST(scenarios, honest_input_safety)
{
    std::mt19937 rng(8);
    const std::string hexd = "0123456789abcdef";
    SqliScenario sqli(config(Variant::Bof));
    SstiScenario ssti(config(Variant::Bof));
    XsleakScenario xs(config(Variant::Bof));
    for (int i = 0; i < 200; ++i) {
        std::string token;
        for (int k = 0, n = rng() % 32; k < n; ++k) token.push_back(hexd[rng() % 16]);
        sqli.set_token(to_bytes(token));
        std::int64_t id = 1 + rng() % 100;
        EXPECT_FALSE(restricted(sqli.lookup(id)));

        std::string comment;
        for (int k = 0, n = rng() % 32; k < n; ++k) comment.push_back(hexd[rng() % 16]);
        auto page = ssti.page(to_bytes(comment));
        EXPECT_FALSE(page.render.ace_triggered);
        EXPECT_EQ(page.render.evaluated_count, 0u);

        std::string query;
        for (int k = 0, n = rng() % 20; k < n; ++k) query.push_back("tr(.+){21}^$*"[rng() % 13]);
        auto env = xs.search(Requester::Victim, query);
        EXPECT_LT(*env.steps, 1000u) << query;
    }
}

TEST(lab, scenarios_per_variant)
{
    Lab bof(config(Variant::Bof));
    EXPECT_TRUE(bof.sqli && bof.ssti && bof.xsleak);
    Lab ufs(config(Variant::Ufs));
    EXPECT_TRUE(ufs.sqli && ufs.ssti);
    EXPECT_FALSE(ufs.xsleak);
    Lab iof(config(Variant::Iof));
    EXPECT_TRUE(iof.sqli);
    EXPECT_FALSE(iof.ssti || iof.xsleak);
}

TEST(config, fixture_path_relative_to_config)
{
    namespace fs = std::filesystem;
    auto dir = fs::path(::testing::TempDir()) / "wasmlab_cfg";
    fs::create_directories(dir);
    {
        std::ofstream(dir / "people.tsv") << "TABLE users(id,name,secret,role)\n0\troot\tFLAG{custom}\troot\n"
                                             "5\teve\teve-1\tuser\n";
        std::ofstream(dir / "lab.conf") << "variant=iof\nfixtures=people.tsv\n";
    }
    auto c = load_config((dir / "lab.conf").string());
    ASSERT_TRUE(c.fixture_path);
    EXPECT_EQ(fs::path(*c.fixture_path), dir / "people.tsv");
    SqliScenario s(c);
    auto r = s.lookup(5);
    ASSERT_EQ(r.rows.size(), 1u);
    EXPECT_EQ(r.rows[0][1], Value{std::string("eve")});
    EXPECT_EQ(code_of([] { load_config("/nonexistent/lab.conf"); }), Errc::Usage);
}
