import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


class FakeCtx:
    """Stand-in for runtime.Context that records everything a handler does."""

    def __init__(self, address=None, now_ms=0.0):
        self.address = address
        self.now_ms = now_ms
        self.sent = []
        self.timers = []
        self.units = 0
        self.emitted = []
        self.traces = []

    def send(self, to, payload):
        self.sent.append((to, payload))

    def schedule(self, delay_ms, payload):
        self.timers.append((self.now_ms + delay_ms, payload))

    def charge(self, units):
        self.units += units

    def emit(self, record):
        self.emitted.append(record)

    def trace(self, kind, **fields):
        self.traces.append((self.now_ms, kind, fields))

    def of_type(self, cls):
        return [(to, p) for to, p in self.sent if isinstance(p, cls)]


@pytest.fixture
def fake_ctx():
    return FakeCtx
