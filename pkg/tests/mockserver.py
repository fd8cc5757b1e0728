"""Scriptable local HTTP server imitating both teacher provider wire formats."""
from __future__ import annotations

import json
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


def default_reply(prefix: str) -> str:
    return f" continued:{prefix[:20]}"


class MockTeacherServer:
    """Counts requests, tracks peak concurrency, and scripts failures.

    reply_fn maps the user-message content to the completion text.
    fail_first: reply 500 to the first N requests.
    delay_s: per-request latency (forces concurrency overlap).
    block_after: hold every request after N completed responses until
    released (simulates a killed client mid-batch).
    """

    def __init__(self, reply_fn=default_reply, fail_first: int = 0,
                 delay_s: float = 0.0, block_after: int | None = None):
        self.reply_fn = reply_fn
        self.fail_first = fail_first
        self.delay_s = delay_s
        self.block_after = block_after
        self._granted = 0
        self._block_event = threading.Event()
        self._lock = threading.Lock()
        self.requests = 0
        self.completed = 0
        self.active = 0
        self.max_active = 0
        self.payloads: list[dict] = []
        self.paths: list[str] = []

        outer = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length))
                with outer._lock:
                    outer.requests += 1
                    index = outer.requests
                    outer.active += 1
                    outer.max_active = max(outer.max_active, outer.active)
                    outer.payloads.append(body)
                    outer.paths.append(self.path)
                try:
                    if outer.delay_s:
                        time.sleep(outer.delay_s)
                    if index <= outer.fail_first:
                        self.send_response(500)
                        self.end_headers()
                        self.wfile.write(b"{}")
                        return
                    with outer._lock:
                        blocked = (outer.block_after is not None
                                   and outer._granted >= outer.block_after)
                        if not blocked:
                            outer._granted += 1
                    if blocked:
                        # Hold until released; the client usually dies first,
                        # so the socket may already be gone when we reply.
                        outer._block_event.wait(timeout=60)
                        try:
                            self.send_response(500)
                            self.end_headers()
                            self.wfile.write(b"{}")
                        except OSError:
                            pass
                        return
                    prefix = body["messages"][0]["content"]
                    reply = outer.reply_fn(prefix)
                    if self.path.endswith("/v1/messages"):
                        payload = {
                            "content": [{"type": "text", "text": reply}],
                            "usage": {"input_tokens": len(prefix.split()),
                                      "output_tokens": len(reply.split())},
                        }
                    else:
                        payload = {
                            "choices": [{"message": {"content": reply}}],
                            "usage": {"prompt_tokens": len(prefix.split()),
                                      "completion_tokens": len(reply.split())},
                        }
                    data = json.dumps(payload).encode()
                    self.send_response(200)
                    self.send_header("Content-Type", "application/json")
                    self.send_header("Content-Length", str(len(data)))
                    self.end_headers()
                    self.wfile.write(data)
                    with outer._lock:
                        outer.completed += 1
                finally:
                    with outer._lock:
                        outer.active -= 1

        self._server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)

    @property
    def url(self) -> str:
        host, port = self._server.server_address
        return f"http://{host}:{port}"

    def reset_counters(self):
        with self._lock:
            self.requests = 0
            self.completed = 0
            self._granted = 0
            self.max_active = 0
            self.payloads = []
            self.paths = []

    def release_blocked(self):
        self._block_event.set()

    def __enter__(self):
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.release_blocked()
        self._server.shutdown()
        self._server.server_close()
        return False
