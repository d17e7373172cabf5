"""Shared test plumbing: app factory, free ports, a uvicorn thread server."""

from __future__ import annotations

import socket
import threading
import time

import uvicorn

from wiswitch.api import BrokerConfig, create_app


def make_app(tmp_path, *, sim_time=True, clock=None, name="ledger.jsonl", **cfg):
    config = BrokerConfig(ledger_path=str(tmp_path / name), sim_time=sim_time, **cfg)
    return create_app(config, clock=clock)


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def wait_for(predicate, timeout_s: float = 10.0, interval_s: float = 0.02):
    deadline = time.monotonic() + timeout_s
    while time.monotonic() < deadline:
        if predicate():
            return True
        time.sleep(interval_s)
    return False


class ServerThread:
    """Run an ASGI app on a real socket for client/CLI tests."""

    def __init__(self, app, port: int | None = None):
        self.port = port or free_port()
        self.base_url = f"http://127.0.0.1:{self.port}"
        config = uvicorn.Config(app, host="127.0.0.1", port=self.port, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> "ServerThread":
        self.thread.start()
        if not wait_for(lambda: self.server.started, timeout_s=10):
            raise RuntimeError("uvicorn did not start in time")
        return self

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=5)
