"""Python bindings for the WebAssembly memory-safety exploitation lab."""

import json

from ._core import (
    LabError,
    Service,
    build_bof_payload,
    calibrate,
    hash_template,
    narrow_to_i32,
    plan_format_write,
    run_exploit_json,
    run_script,
    sanitize_pattern,
    snapshot_magic,
    uaf_payload,
)

__all__ = [
    "LabError",
    "Service",
    "build_bof_payload",
    "calibrate",
    "error_code",
    "hash_template",
    "narrow_to_i32",
    "plan_format_write",
    "run_exploit",
    "run_script",
    "sanitize_pattern",
    "snapshot_magic",
    "uaf_payload",
]


def run_exploit(scenario, vector, harden="", designated=False, oracle="steps", samples=0):
    """Runs an exploit chain and returns the JSON report as a dict."""
    return json.loads(run_exploit_json(scenario, vector, harden, designated, oracle, samples))


def error_code(err):
    """The E-code of a LabError, e.g. "ECANARY"."""
    return str(err).split(":", 1)[0]
