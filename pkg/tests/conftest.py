import http.server
import json
import threading

import numpy as np
import pytest

from textdp_audit.core import Corpus, EmbeddingTable, TextRecord

# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------


def make_corpus(token_lists, vocab=None):
    return Corpus(tuple(TextRecord(i, tuple(t)) for i, t in enumerate(token_lists)), vocab=vocab)


@pytest.fixture
def binary_corpus():
    """Two records, so GRR with g=2 gives every pair distinct values."""
    return make_corpus([[0], [1]])


@pytest.fixture
def small_table():
    rng = np.random.default_rng(7)
    return EmbeddingTable(rng.standard_normal((12, 5)), source_path="test-table")


@pytest.fixture
def word_corpus():
    # 6 records over 12 tokens, pairwise distinct token sets
    return make_corpus([[0, 1, 2], [3, 4], [5, 6, 7], [8, 9], [10, 11], [0, 5, 10]])


# ---------------------------------------------------------------------------
# Local chat-completion server for the remote judge
# ---------------------------------------------------------------------------


class MockJudge:
    def __init__(self):
        self.replies = []          # consumed in order; the last one repeats
        self.fail_first = 0        # number of requests answered with HTTP 500
        self.requests = []
        self.lock = threading.Lock()

    def next_reply(self, body):
        with self.lock:
            self.requests.append(body)
            if self.fail_first > 0:
                self.fail_first -= 1
                return None
            if callable(self.replies):
                return self.replies(body)
            return self.replies.pop(0) if len(self.replies) > 1 else self.replies[0]


@pytest.fixture
def mock_judge():
    state = MockJudge()

    class Handler(http.server.BaseHTTPRequestHandler):
        def do_POST(self):
            length = int(self.headers.get("Content-Length", 0))
            body = json.loads(self.rfile.read(length))
            body["_path"] = self.path
            body["_auth"] = self.headers.get("Authorization")
            reply = state.next_reply(body)
            if reply is None:
                self.send_response(500)
                self.end_headers()
                return
            payload = json.dumps({"choices": [{"message": {"role": "assistant",
                                                           "content": reply}}]}).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def log_message(self, *args):
            pass

    server = http.server.ThreadingHTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}/v1"
    yield state
    server.shutdown()
    server.server_close()


# ---------------------------------------------------------------------------
# One PASS/FAIL line per acceptance criterion
# ---------------------------------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    number_title = _criterion_index.get(report.nodeid)
    if number_title is None:
        return
    _criteria[number_title] = report.passed


_criterion_index = {}


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            _criterion_index[item.nodeid] = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), passed in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}")
