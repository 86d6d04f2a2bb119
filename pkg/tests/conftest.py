import hashlib
import json
import math
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from contentval.model import Construct, Item, Questionnaire

BIG_FIVE = ("agreeableness", "conscientiousness", "extraversion", "neuroticism", "openness")


def make_questionnaire(counts, name="test", constructs=None):
    """Questionnaire with counts[k] items in construct k."""
    constructs = constructs or [f"c{k + 1}" for k in range(len(counts))]
    items = []
    for cid, n in zip(constructs, counts):
        for j in range(n):
            items.append(Item(f"{cid}_{j + 1}", f"item {j + 1} of {cid}", cid, "en"))
    return Questionnaire(name, tuple(Construct(c, c.title()) for c in constructs), tuple(items))


@pytest.fixture
def bfq_shape():
    return make_questionnaire([10] * 5, name="BFQ", constructs=list(BIG_FIVE))


def text_vector(text, dim):
    """Deterministic pseudo-embedding derived from a hash of the text."""
    out = []
    counter = 0
    while len(out) < dim:
        digest = hashlib.sha256(f"{counter}:{text}".encode()).digest()
        for k in range(0, len(digest), 4):
            out.append(int.from_bytes(digest[k : k + 4], "little") / 2**32 - 0.5)
        counter += 1
    return out[:dim]


def pair_score(a, b):
    va, vb = text_vector(a, 8), text_vector(b, 8)
    dot = sum(x * y for x, y in zip(va, vb))
    return max(-1.0, min(1.0, dot / math.sqrt(sum(x * x for x in va) * sum(y * y for y in vb))))


class StubState:
    def __init__(self, dim=8):
        self.dim = dim
        self.transient_failures = 0  # next N requests answer 500
        self.permanent_failure_after = None  # requests beyond this count answer 500 forever
        self.short_response = False
        self.score_override = None
        self.requests = []
        self.lock = threading.Lock()


class StubHandler(BaseHTTPRequestHandler):
    def log_message(self, *args):
        pass

    def _send(self, status, body):
        raw = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def do_POST(self):
        state = self.server.state
        length = int(self.headers.get("Content-Length", 0))
        payload = json.loads(self.rfile.read(length))
        with state.lock:
            state.requests.append((self.path, payload, self.headers.get("Authorization")))
            served = len(state.requests)
            if state.transient_failures > 0:
                state.transient_failures -= 1
                return self._send(500, {"error": "transient"})
            if state.permanent_failure_after is not None and served > state.permanent_failure_after:
                return self._send(500, {"error": "down"})
        if self.path == "/embeddings":
            texts = payload["input"]
            data = [{"index": k, "embedding": text_vector(t, state.dim)} for k, t in enumerate(texts)]
            data.reverse()  # clients must reorder by index
            if state.short_response:
                data = data[:-1]
            return self._send(200, {"data": data, "model": payload["model"]})
        if self.path == "/score":
            scores = [pair_score(a, b) for a, b in payload["pairs"]]
            if state.score_override is not None:
                scores = [state.score_override for _ in scores]
            if state.short_response:
                scores = scores[:-1]
            return self._send(200, {"scores": scores})
        return self._send(404, {"error": "not found"})


@pytest.fixture
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), StubHandler)
    server.state = StubState()
    thread = threading.Thread(target=server.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    server.server_close()


# One PASS/FAIL line per acceptance criterion in the terminal summary.
_acceptance_results = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _acceptance_results.append((marker.args[0], marker.args[1], report.outcome))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    verdicts = {}
    for number, title, outcome in _acceptance_results:
        ok = verdicts.get(number, (title, True))[1] and outcome == "passed"
        verdicts[number] = (title, ok)
    terminalreporter.section("acceptance criteria")
    for number, (title, ok) in sorted(verdicts.items()):
        terminalreporter.write_line(f"AC{number:<3} {'PASS' if ok else 'FAIL'}  {title}")
