"""Shared helpers for tests that stand up routers and nodes on localhost."""

import socket
import time


def free_port() -> int:
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def wait_until(pred, timeout=5.0, interval=0.01, msg="condition"):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if pred():
            return True
        time.sleep(interval)
    raise AssertionError(f"timed out waiting for {msg}")


def data_frames_out(*counted) -> int:
    """Total data frames written to sockets by the given nodes and routers."""
    return sum(c.stats()["frames_out"] for c in counted)
