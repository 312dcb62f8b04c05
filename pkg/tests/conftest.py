import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

from ncodenas.evaluators import SyntheticEvaluator, separable_landscape
from ncodenas.space import nas_bench_201_space, uniform_space

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def nb201():
    return nas_bench_201_space()


@pytest.fixture
def space_6x5():
    return uniform_space("grid-6x5", 6, 5)


@pytest.fixture
def separable_6x5(space_6x5):
    return SyntheticEvaluator(space_6x5, separable_landscape(space_6x5))


class StubChat:
    """Scripted chat-completion endpoint.

    ``replies`` is consumed one entry per request; an entry is a reply
    string, or ``("sleep", seconds)`` to stall past the client timeout, or
    ``("status", code)`` for an HTTP error. The last entry repeats.
    """

    def __init__(self):
        self.replies = ["0"]
        self.requests = []
        self._server = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self._server.daemon_threads = True
        self._thread = threading.Thread(target=self._server.serve_forever, args=(0.05,), daemon=True)
        self._thread.start()

    @property
    def url(self):
        host, port = self._server.server_address
        return f"http://{host}:{port}/v1"

    def _next(self):
        if len(self.replies) > 1:
            return self.replies.pop(0)
        return self.replies[0]

    def _handler(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                stub.requests.append({"path": self.path, "body": body,
                                      "auth": self.headers.get("Authorization")})
                reply = stub._next()
                if isinstance(reply, tuple) and reply[0] == "sleep":
                    time.sleep(reply[1])
                    reply = "0"
                if isinstance(reply, tuple) and reply[0] == "status":
                    self.send_response(reply[1])
                    self.end_headers()
                    return
                payload = json.dumps(
                    {"choices": [{"message": {"role": "assistant", "content": reply}}]}
                ).encode()
                try:
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(payload)))
                    self.end_headers()
                    self.wfile.write(payload)
                except (BrokenPipeError, ConnectionResetError):
                    pass

        return Handler

    def close(self):
        self._server.shutdown()
        self._server.server_close()


@pytest.fixture
def stub_chat(monkeypatch):
    monkeypatch.setenv("LM_SEARCHER_API_KEY", "test-key")
    stub = StubChat()
    yield stub
    stub.close()


def pytest_terminal_summary(terminalreporter):
    module = __import__("sys").modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
