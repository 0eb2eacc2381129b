"""Starts `wasmlab serve` on a free port given through LAB_PORT and exercises
each endpoint over a real socket."""
import json
import os
import signal
import socket
import subprocess
import sys
import time
import urllib.error
import urllib.request


def free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def request(port, method, path, body=None, headers=None):
    data = json.dumps(body).encode() if body is not None else None
    req = urllib.request.Request(f"http://127.0.0.1:{port}{path}", data=data, method=method,
                                 headers=headers or {})
    try:
        with urllib.request.urlopen(req, timeout=10) as r:
            return r.status, dict(r.headers), r.read().decode()
    except urllib.error.HTTPError as e:
        return e.code, dict(e.headers), e.read().decode()


def main(binary, config):
    port = free_port()
    env = dict(os.environ, LAB_PORT=str(port))
    proc = subprocess.Popen([binary, "serve", "--config", config], env=env,
                            stdout=subprocess.PIPE, stderr=subprocess.STDOUT, text=True)
    try:
        line = proc.stdout.readline()
        assert f"127.0.0.1:{port}" in line, line
        status, _, body = request(port, "GET", "/health")
        assert (status, body) == (200, "ok"), (status, body)

        status, _, body = request(port, "GET", "/sqli/lookup?id=4294967296")
        assert status == 200 and json.loads(body)["rows"][0][0] == 0, body
        status, _, body = request(port, "GET", "/sqli/lookup?id=0")
        assert status == 403, (status, body)

        token = ("A" * 32 + "SELECT 1").encode().hex() + "00"
        status, _, body = request(port, "POST", "/sqli/token", {"token_hex": token})
        assert status == 200, body
        status, _, body = request(port, "GET", "/sqli/lookup")
        assert json.loads(body)["rows"] == [[1]], body

        status, headers, body = request(port, "GET", "/ssti/page")
        assert status == 200 and "nonce=" in body, body

        auth = {"Authorization": "Bearer victim-session"}
        status, headers, body = request(port, "POST", "/xsleak/search", {"query": "trust"}, auth)
        assert (status, body) == (200, "ok"), (status, body)
        status, _, body = request(port, "POST", "/xsleak/secret", {"secret": "mine"})
        assert status == 200, body
        status, _, body = request(port, "GET", "/nope")
        assert status == 404, body
    finally:
        proc.send_signal(signal.SIGINT)
        try:
            proc.wait(timeout=10)
        except subprocess.TimeoutExpired:
            proc.kill()
            raise
    assert proc.returncode == 0, proc.returncode
    print("serve smoke ok on port", port)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
