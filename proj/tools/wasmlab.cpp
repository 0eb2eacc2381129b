#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wasmlab/exploits.hpp"
#include "wasmlab/service.hpp"

using namespace wasmlab;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitMismatch = 1;
constexpr int kExitUsage = 2;

LabService* g_service = nullptr;

void emit(const json& j, const std::string& path) {
    if (path.empty()) {
        std::cout << j.dump(2) << "\n";
        return;
    }
    std::ofstream f(path);
    if (!f) throw LabError(Errc::Usage, "cannot write " + path);
    f << j.dump(2) << "\n";
}

json call_json(const CallRecord& c, const std::string& output) {
    json j{{"name", c.name}};
    if (c.value) j["value"] = *c.value;
    if (c.trap) j["trap"] = std::string(errc_name(*c.trap));
    if (!output.empty()) j["output"] = output;
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"WebAssembly memory-safety exploitation lab"};
    app.require_subcommand(1);

    std::string scenario_name, vector_name, harden, expect, output, config_path, oracle = "steps";
    std::string backend_name = "sim", against = "wasm", snapshot_out, gadget_name = "linear";
    std::uint32_t samples = 0, length = 24;
    int port = -1;
    bool designated = false;

    auto* run = app.add_subcommand("run", "Run a scripted call list on a backend");
    std::string script_path;
    run->add_option("script", script_path, "Script file")->required()->check(CLI::ExistingFile);
    run->add_option("--backend", backend_name, "sim or wasm");
    run->add_option("--snapshot-out", snapshot_out, "Write the final snapshot here");
    run->add_option("-o,--output", output, "Write the JSON result here");

    auto* exploit = app.add_subcommand("exploit", "Run an automated exploit chain");
    exploit->add_option("--scenario", scenario_name, "sqli, ssti or xsleak")->required();
    exploit->add_option("--vector", vector_name, "bof, ufs, uaf or iof")->required();
    exploit->add_option("--harden", harden, "Comma separated hardening flags");
    exploit->add_flag("--designated", designated, "Enable the flag designated for this vector");
    exploit->add_option("--expect", expect, "success or fail")->check(CLI::IsMember({"success", "fail"}));
    exploit->add_option("--oracle", oracle, "steps or wallclock");
    exploit->add_option("--samples", samples, "Samples per guess (wall-clock mode)");
    exploit->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    exploit->add_option("--backend", backend_name, "sim or wasm");
    exploit->add_option("-o,--output", output, "Write the JSON report here");

    auto* serve = app.add_subcommand("serve", "Start the HTTP service");
    serve->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
    serve->add_option("--vector", vector_name, "Guest variant");
    serve->add_option("--harden", harden, "Comma separated hardening flags");
    serve->add_option("--port", port, "Port (LAB_PORT overrides the config file)");

    auto* calibrate_cmd = app.add_subcommand("calibrate", "Print the hit/miss step table");
    calibrate_cmd->add_option("--gadget", gadget_name, "linear, nested or nested-trailing");
    calibrate_cmd->add_option("--oracle", oracle, "steps or wallclock");
    calibrate_cmd->add_option("--samples", samples, "Samples per case");
    calibrate_cmd->add_option("--length", length, "Synthetic subject length");

    auto* diff = app.add_subcommand("diff", "Compare two backends on a scripted call list");
    diff->add_option("script", script_path, "Script file")->required()->check(CLI::ExistingFile);
    diff->add_option("--against", against, "Backend compared with sim");
    diff->add_option("-o,--output", output, "Write the JSON report here");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*run) {
            auto script = load_script(script_path);
            auto b = instantiate(parse_backend_kind(backend_name), script.spec);
            auto result = run_script(*b, script);
            json calls = json::array();
            for (std::size_t i = 0; i < result.calls.size(); ++i)
                calls.push_back(call_json(result.calls[i], result.output[i]));
            if (!snapshot_out.empty()) {
                std::ofstream f(snapshot_out, std::ios::binary);
                f.write(reinterpret_cast<const char*>(result.final_snapshot.data()),
                        static_cast<std::streamsize>(result.final_snapshot.size()));
            }
            emit({{"scenario", to_string(script.spec.scenario)},
                  {"variant", to_string(script.spec.variant)},
                  {"backend", backend_name},
                  {"calls", calls},
                  {"snapshot_mismatches", result.snapshot_mismatches}},
                 output);
            return result.snapshot_mismatches.empty() ? kExitOk : kExitMismatch;
        }

        if (*exploit) {
            ExploitOptions opts;
            if (!config_path.empty()) opts.base = load_config(config_path);
            opts.base.backend = parse_backend_kind(backend_name);
            opts.mode = parse_oracle_mode(oracle);
            opts.samples = samples;
            auto s = parse_scenario(scenario_name);
            auto v = parse_variant(vector_name);
            if (!exploit_supported(s, v))
                throw LabError(Errc::Unsupported, scenario_name + " x " + vector_name + " is not implemented");
            auto h = designated ? designated_hardening(s, v) : parse_hardening(harden);
            auto report = run_exploit(s, v, h, opts);
            emit(to_json(report), output);
            if (expect.empty()) expect = h.any() ? "" : "success";
            if (expect == "success" && !report.success) return kExitMismatch;
            if (expect == "fail" && report.success) return kExitMismatch;
            return kExitOk;
        }

        if (*serve) {
            LabConfig cfg = config_path.empty() ? LabConfig{} : load_config(config_path);
            if (!vector_name.empty()) cfg.variant = parse_variant(vector_name);
            if (!harden.empty()) cfg.hardening = parse_hardening(harden);
            if (port >= 0) cfg.port = static_cast<std::uint16_t>(port);
            cfg.port = resolve_port(cfg);
            LabService service(cfg);
            g_service = &service;
            std::signal(SIGINT, [](int) {
                if (g_service) g_service->stop();
            });
            std::signal(SIGTERM, [](int) {
                if (g_service) g_service->stop();
            });
            service.serve("127.0.0.1", cfg.port, [&](int bound) {
                std::cout << "listening on 127.0.0.1:" << bound << " variant " << to_string(cfg.variant)
                          << " hardening " << hardening_to_string(cfg.hardening) << std::endl;
            });
            g_service = nullptr;
            return kExitOk;
        }

        if (*calibrate_cmd) {
            auto mode = parse_oracle_mode(oracle);
            auto cal = calibrate(parse_gadget(gadget_name), mode, length, samples ? samples : 3);
            std::cout << format_calibration_table(cal);
            return kExitOk;
        }

        if (*diff) {
            auto script = load_script(script_path);
            auto kind = parse_backend_kind(against);
            auto report = diff_outcomes(
                script, [](const InstanceSpec& s) { return instantiate(BackendKind::Sim, s); },
                [kind](const InstanceSpec& s) { return instantiate(kind, s); });
            json ranges = json::array();
            for (const auto& r : report.memory_diffs) ranges.push_back({r.first, r.last});
            emit({{"identical", report.identical},
                  {"return_diffs", report.return_diffs},
                  {"memory_diffs", ranges},
                  {"metadata_differs", report.metadata_differs}},
                 output);
            return report.identical ? kExitOk : kExitMismatch;
        }
    } catch (const LabError& e) {
        std::cerr << "wasmlab: " << e.what() << "\n";
        return e.code() == Errc::Usage || e.code() == Errc::Unsupported ? kExitUsage : kExitMismatch;
    } catch (const std::exception& e) {
        std::cerr << "wasmlab: " << e.what() << "\n";
        return kExitMismatch;
    }
    return kExitOk;
}
