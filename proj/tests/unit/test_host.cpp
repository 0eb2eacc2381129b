#include <gtest/gtest.h>

#include <fstream>

#include "wasmlab/host.hpp"

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

Errc trap_cause(auto&& fn) {
    try {
        fn();
    } catch (const TrapError& e) {
        return e.cause();
    }
    ADD_FAILURE() << "no trap";
    return Errc::Usage;
}

std::unique_ptr<Backend> sim(Scenario s, Variant v, HardeningConfig h = {}) {
    return instantiate(BackendKind::Sim, {s, v, h, 0x5eed});
}

std::uint32_t stage(Backend& b, std::string_view text) { return stage_input(b, to_bytes(text)); }

}  // namespace

TEST(host, names_roundtrip)
{
    for (auto s : {Scenario::Sqli, Scenario::Ssti, Scenario::Xsleak}) EXPECT_EQ(parse_scenario(to_string(s)), s);
    for (auto v : {Variant::Bof, Variant::Ufs, Variant::Uaf, Variant::Iof}) EXPECT_EQ(parse_variant(to_string(v)), v);
    EXPECT_EQ(parse_backend_kind("wasm"), BackendKind::Wasm);
    EXPECT_EQ(code_of([] { parse_scenario("xss"); }), Errc::Usage);
}

TEST(host, unsupported_pairs)
{
    EXPECT_EQ(code_of([] { sim(Scenario::Xsleak, Variant::Ufs); }), Errc::Unsupported);
    EXPECT_EQ(code_of([] { sim(Scenario::Xsleak, Variant::Iof); }), Errc::Unsupported);
    EXPECT_EQ(code_of([] { sim(Scenario::Ssti, Variant::Iof); }), Errc::Unsupported);
}

TEST(host, wasm_backend_reports_instantiate)
{
    EXPECT_EQ(code_of([] { instantiate(BackendKind::Wasm, {}); }), Errc::Instantiate);
}

TEST(host, instantiation_is_deterministic)
{
    for (auto s : {Scenario::Sqli, Scenario::Ssti, Scenario::Xsleak})
        for (auto v : {Variant::Bof, Variant::Ufs, Variant::Uaf, Variant::Iof}) {
            if (s == Scenario::Ssti && v == Variant::Iof) continue;
            if (s == Scenario::Xsleak && (v == Variant::Ufs || v == Variant::Iof)) continue;
            EXPECT_EQ(sim(s, v)->snapshot(), sim(s, v)->snapshot());
        }
}

TEST(host, exports_and_errors)
{
    auto b = sim(Scenario::Sqli, Variant::Ufs);
    EXPECT_EQ(b->call("sqli_get_query_addr"), layout::kStaticQuery);
    EXPECT_EQ(code_of([&] { b->call("nope"); }), Errc::NoExport);
    EXPECT_EQ(trap_cause([&] { b->call("sqli_get_query_addr", {1}); }), Errc::Args);

    auto bof = sim(Scenario::Sqli, Variant::Bof);
    auto q = bof->call("sqli_get_query_addr");
    EXPECT_GT(q, RegionMap::stack_limit);
    EXPECT_LT(q, RegionMap::stack_top);
    EXPECT_EQ(bof->memory().read_cstring(q, 64), kDefaultQuery);
    EXPECT_EQ(trap_cause([&] { bof->call("sqli_set_token", {kMemorySize - 2, 10}); }), Errc::Oob);
}

TEST(host, sqli_token_overflow_reaches_query)
{
    auto b = sim(Scenario::Sqli, Variant::Bof);
    auto payload = std::string(32, 'A') + "SELECT 1" + '\0';
    auto addr = stage(*b, payload);
    EXPECT_EQ(b->call("sqli_set_token", {addr, static_cast<std::uint32_t>(payload.size())}), payload.size());
    EXPECT_EQ(b->memory().read_cstring(b->call("sqli_get_query_addr"), 64), "SELECT 1");
}

TEST(host, sqli_canary_traps)
{
    HardeningConfig h;
    h.canaries = true;
    auto b = sim(Scenario::Sqli, Variant::Bof, h);
    auto payload = std::string(32, 'A') + "SELECT 1" + '\0';
    auto addr = stage(*b, payload);
    EXPECT_EQ(trap_cause([&] { b->call("sqli_set_token", {addr, 41}); }), Errc::Canary);
}

TEST(host, ssti_nonce_reuse)
{
    auto b = sim(Scenario::Ssti, Variant::Uaf);
    auto n = b->call("ssti_make_nonce");
    EXPECT_EQ(b->memory().read_cstring(n, 64).size(), 16u);
    b->call("ssti_free_nonce");
    auto addr = stage(*b, std::string("#{7*7}") + std::string(10, '\0'));
    EXPECT_EQ(b->call("ssti_set_comment", {addr, 16}), n);
    EXPECT_EQ(b->memory().read_cstring(b->call("ssti_get_nonce_addr"), 64), "#{7*7}");
    EXPECT_EQ(trap_cause([&] {
                  b->call("ssti_free_nonce");
                  b->call("ssti_free_nonce");
              }),
              Errc::DoubleFree);
}

TEST(host, ssti_static_nonce)
{
    auto b = sim(Scenario::Ssti, Variant::Ufs);
    EXPECT_EQ(b->call("ssti_make_nonce"), layout::kStaticNonce);
    auto nonce = b->memory().read_cstring(layout::kStaticNonce, 64);
    EXPECT_EQ(nonce.size(), 16u);
    EXPECT_EQ(nonce.find_first_not_of("0123456789abcdef"), std::string::npos);
}

TEST(host, xsleak_slot_overflow_reaches_pattern)
{
    auto b = sim(Scenario::Xsleak, Variant::Bof);
    EXPECT_EQ(b->call("xsleak_get_pattern_addr"), layout::kPattern);
    EXPECT_EQ(b->call("xsleak_get_secret_addr", {3}), layout::kSecrets + 96);
    auto addr = stage(*b, std::string(32, 'B') + "^x(.+)\0");
    b->call("xsleak_store_secret", {3, addr, 40});
    EXPECT_EQ(b->memory().read_cstring(layout::kPattern, 64), "^x(.+)");
    EXPECT_EQ(trap_cause([&] { b->call("xsleak_get_secret_addr", {4}); }), Errc::Oob);
}

TEST(host, fmt_echo_leaks_and_writes)
{
    auto b = sim(Scenario::Ssti, Variant::Ufs);
    auto addr = stage(*b, std::string("%x.%d") + '\0');
    b->call("fmt_echo", {addr, 0xdeadbeef, 7});
    EXPECT_EQ(b->take_output(), "deadbeef.7");
    addr = stage(*b, std::string(35, 'A') + "%n" + '\0');
    b->call("fmt_echo", {addr, layout::kStaticNonce, 0});
    EXPECT_EQ(b->memory().read(layout::kStaticNonce, 4), (Bytes{'#', 0, 0, 0}));
}

TEST(host, stage_input_cap)
{
    auto b = sim(Scenario::Sqli, Variant::Bof);
    EXPECT_EQ(stage_input(*b, Bytes(4096, 'x')), RegionMap::io_base);
    EXPECT_EQ(code_of([&] { stage_input(*b, Bytes(4097, 'x')); }), Errc::Size);
}

TEST(host, hex)
{
    EXPECT_EQ(to_hex(to_bytes("A\x01")), "4101");
    EXPECT_EQ(from_hex("4101"), to_bytes("A\x01"));
    EXPECT_EQ(code_of([] { from_hex("abc"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { from_hex("zz"); }), Errc::Usage);
}

TEST(script, parse)
{
    auto s = parse_script("# comment\nSCENARIO sqli bof canaries\nCALL sqli_set_token 0x2000 41\n"
                          "WRITE 0x2000 41414141\nEXPECT_SNAPSHOT a.snap\n",
                          "/tmp");
    EXPECT_EQ(s.spec.scenario, Scenario::Sqli);
    EXPECT_TRUE(s.spec.hardening.canaries);
    ASSERT_EQ(s.steps.size(), 3u);
    EXPECT_EQ(std::get<ScriptCall>(s.steps[0]).args, (std::vector<std::uint32_t>{0x2000, 41}));
    EXPECT_EQ(std::get<ScriptWrite>(s.steps[1]).data, to_bytes("AAAA"));
    EXPECT_EQ(std::get<ScriptExpectSnapshot>(s.steps[2]).path, "a.snap");

    EXPECT_EQ(code_of([] { parse_script("CALL x\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_script("SCENARIO sqli bof\nJUMP 1\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_script("SCENARIO sqli bof\nWRITE 0x10\n"); }), Errc::Usage);
    EXPECT_EQ(code_of([] { parse_script("SCENARIO sqli bof\nCALL f 12z\n"); }), Errc::Usage);
}

TEST(script, run_records_traps_and_snapshots)
{
    auto dir = ::testing::TempDir();
    auto b0 = sim(Scenario::Sqli, Variant::Bof);
    {
        std::ofstream f(dir + "/init.snap", std::ios::binary);
        auto snap = b0->snapshot();
        f.write(reinterpret_cast<const char*>(snap.data()), static_cast<std::streamsize>(snap.size()));
    }
    auto script = parse_script("SCENARIO sqli bof\nEXPECT_SNAPSHOT init.snap\nCALL nope\n"
                               "WRITE 0x2000 41\nCALL sqli_set_token 0x2000 1\nEXPECT_SNAPSHOT init.snap\n"
                               "EXPECT_SNAPSHOT missing.snap\n",
                               dir);
    auto b = instantiate(BackendKind::Sim, script.spec);
    auto run = run_script(*b, script);
    ASSERT_EQ(run.calls.size(), 2u);
    EXPECT_EQ(run.calls[0].trap, Errc::NoExport);
    EXPECT_EQ(run.calls[1].value, 1u);
    ASSERT_EQ(run.snapshot_mismatches.size(), 2u);
    EXPECT_NE(run.snapshot_mismatches[0].find("differs"), std::string::npos);
    EXPECT_NE(run.snapshot_mismatches[1].find("missing"), std::string::npos);
}

TEST(diff_outcomes, sim_against_itself)
{
    auto script = parse_script("SCENARIO ssti uaf\nCALL ssti_make_nonce\nCALL ssti_free_nonce\n"
                               "WRITE 0x2000 237b372a377d00000000000000000000\nCALL ssti_set_comment 0x2000 16\n");
    BackendFactory s = [](const InstanceSpec& spec) { return instantiate(BackendKind::Sim, spec); };
    auto r = diff_outcomes(script, s, s);
    EXPECT_TRUE(r.identical);

    auto empty = parse_script("SCENARIO sqli bof\n");
    EXPECT_TRUE(diff_outcomes(empty, s, s).identical);

    // A backend with a different seed yields a different nonce.
    BackendFactory other = [](const InstanceSpec& spec) {
        auto copy = spec;
        copy.seed ^= 1;
        return instantiate(BackendKind::Sim, copy);
    };
    auto d = diff_outcomes(parse_script("SCENARIO ssti uaf\nCALL ssti_make_nonce\n"), s, other);
    EXPECT_FALSE(d.identical);
    EXPECT_FALSE(d.memory_diffs.empty());

    EXPECT_EQ(code_of([&] { diff_outcomes(script); }), Errc::Instantiate);
}
