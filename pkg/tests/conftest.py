import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from erp.policy import TablePolicy
from erp.vocab import BOS_ID, EOS_ID, Vocabulary


@pytest.fixture
def ab_vocab():
    return Vocabulary(["a", "b"], "char")


@pytest.fixture
def toy_policy():
    """P(a|BOS)=0.6, P(EOS|BOS)=0.4, P(EOS|a)=1.0 over {BOS, EOS, a}."""
    vocab = Vocabulary(["a"], "char")
    a = vocab.lookup["a"]
    table = {(BOS_ID,): {a: 0.6, EOS_ID: 0.4}, (BOS_ID, a): {EOS_ID: 1.0}}
    return TablePolicy(vocab, table, default="error")


class MockServer:
    """Tiny JSON server; `handler(path, payload)` returns (status, body) or sleeps."""

    def __init__(self, handler):
        self.calls = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                outer.calls.append((self.path, payload))
                status, body = handler(self.path, payload)
                raw = body if isinstance(body, bytes) else json.dumps(body).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                try:
                    self.wfile.write(raw)
                except OSError:
                    pass

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.httpd.daemon_threads = True
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def mock_server():
    servers = []

    def make(handler):
        srv = MockServer(handler).__enter__()
        servers.append(srv)
        return srv

    yield make
    for srv in servers:
        srv.__exit__(None, None, None)


def unused_port_url():
    import socket

    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return f"http://127.0.0.1:{port}"


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
