#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "wasmlab/exploits.hpp"
#include "wasmlab/service.hpp"

namespace py = pybind11;
using namespace wasmlab;

namespace {

Bytes to_bytes_py(const py::bytes& b) {
    std::string s = b;
    return Bytes(s.begin(), s.end());
}

py::bytes from_bytes(const Bytes& b) { return py::bytes(reinterpret_cast<const char*>(b.data()), b.size()); }

HardeningConfig hardening_for(Scenario s, Variant v, const std::string& harden, bool designated) {
    if (designated) return designated_hardening(s, v);
    return parse_hardening(harden);
}

py::dict script_result(const ScriptRun& run) {
    py::list calls;
    for (std::size_t i = 0; i < run.calls.size(); ++i) {
        const auto& c = run.calls[i];
        py::dict d;
        d["name"] = c.name;
        d["value"] = c.value ? py::object(py::int_(*c.value)) : py::object(py::none());
        d["trap"] = c.trap ? py::object(py::str(std::string(errc_name(*c.trap)))) : py::object(py::none());
        d["output"] = i < run.output.size() ? run.output[i] : std::string();
        calls.append(d);
    }
    py::dict out;
    out["calls"] = calls;
    out["snapshot"] = from_bytes(run.final_snapshot);
    out["snapshot_mismatches"] = run.snapshot_mismatches;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "WebAssembly memory-safety exploitation lab";

    static py::exception<LabError> lab_error(m, "LabError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const LabError& e) {
            py::set_error(lab_error, e.what());
        }
    });

    m.def("snapshot_magic", [] { return std::string(kSnapshotMagic); });
    m.def("narrow_to_i32", &narrow_to_i32, py::arg("value"));
    m.def("sanitize_pattern", &sanitize_pattern, py::arg("query"));
    m.def("hash_template", &hash_template, py::arg("text"));

    m.def(
        "build_bof_payload",
        [](std::uint32_t fill, const std::string& inject) { return from_bytes(build_bof_payload(fill, inject)); },
        py::arg("fill_len"), py::arg("inject"));
    m.def(
        "uaf_payload", [](const std::string& text, std::uint32_t chunk) { return from_bytes(uaf_payload(text, chunk)); },
        py::arg("text"), py::arg("chunk_size"));
    m.def(
        "plan_format_write",
        [](std::uint32_t addr, const py::bytes& payload) {
            py::list out;
            for (const auto& r : plan_format_write(addr, ByteView(to_bytes_py(payload))).requests)
                out.append(py::make_tuple(r.format, r.varargs));
            return out;
        },
        py::arg("target_addr"), py::arg("payload"));

    m.def(
        "run_exploit_json",
        [](const std::string& scenario, const std::string& vector, const std::string& harden, bool designated,
           const std::string& oracle, std::uint32_t samples) {
            auto s = parse_scenario(scenario);
            auto v = parse_variant(vector);
            ExploitOptions opts;
            opts.mode = parse_oracle_mode(oracle);
            opts.samples = samples;
            py::gil_scoped_release release;
            return to_json(run_exploit(s, v, hardening_for(s, v, harden, designated), opts)).dump();
        },
        py::arg("scenario"), py::arg("vector"), py::arg("harden") = "", py::arg("designated") = false,
        py::arg("oracle") = "steps", py::arg("samples") = 0);

    m.def(
        "calibrate",
        [](const std::string& gadget, const std::string& oracle, std::uint32_t samples) {
            auto cal = calibrate(parse_gadget(gadget), parse_oracle_mode(oracle), 24, samples);
            py::dict d;
            d["hit"] = cal.hit;
            d["miss"] = cal.miss;
            d["ratio"] = cal.ratio;
            d["threshold"] = cal.threshold;
            d["table"] = format_calibration_table(cal);
            return d;
        },
        py::arg("gadget") = "linear", py::arg("oracle") = "steps", py::arg("samples") = 3);

    m.def(
        "run_script",
        [](const std::string& text, const std::string& base_dir) {
            auto script = parse_script(text, base_dir);
            auto b = instantiate(BackendKind::Sim, script.spec);
            return script_result(run_script(*b, script));
        },
        py::arg("text"), py::arg("base_dir") = ".");

    py::class_<LabService>(m, "Service")
        .def(py::init([](const std::string& config_text) { return std::make_unique<LabService>(parse_config(config_text)); }),
             py::arg("config_text") = "")
        .def(
            "handle",
            [](LabService& s, const std::string& method, const std::string& path,
               std::map<std::string, std::string> query, std::map<std::string, std::string> headers,
               const std::string& body) {
                HttpRequest req{method, path, std::move(query), {}, body};
                for (auto& [k, v] : headers) {
                    std::string name = k;
                    for (auto& c : name) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
                    req.headers[name] = v;
                }
                auto r = s.handle(req);
                return py::make_tuple(r.status, r.content_type, r.body, r.headers);
            },
            py::arg("method"), py::arg("path"), py::arg("query") = std::map<std::string, std::string>{},
            py::arg("headers") = std::map<std::string, std::string>{}, py::arg("body") = "");
}
