from __future__ import annotations

from pathlib import Path

import pytest

from qof.core import Config, KeyMaterial, decode
from qof.runtime import SimRuntime
from qof.transport import CostModel, Scheduler, SimNetwork

GOLDEN = Path(__file__).parent / "golden"


class Cluster:
    """n parties on a simulated network, each with one protocol module per tag."""

    def __init__(self, n: int, f: int, delay=(1.0, 1.0), seed: int = 0, kappa: int = 0):
        self.cfg = Config(n, f, kappa)
        self.keys = KeyMaterial(n, seed=seed)
        self.sched = Scheduler()
        self.net = SimNetwork(self.keys, self.sched, seed=seed, delay_range=delay, costs=CostModel.free())
        self.rts = [SimRuntime(p, self.cfg, self.keys, self.net) for p in range(n)]
        self.modules: list[dict] = [{} for _ in range(n)]
        for p in range(n):
            self.net.attach(p, self._handler(p))

    def _handler(self, p):
        def handle(src, body):
            msg = decode(body)
            mod = self.modules[p].get(msg[0])
            if mod is not None:
                mod.handle(src, msg)

        return handle

    def run(self, until: float | None = None):
        self.sched.run(until=until)


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
