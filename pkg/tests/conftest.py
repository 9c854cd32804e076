import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from sotrack.config import NetConfig, PretrainConfig
from sotrack.objectness import PretrainResult, pretrain


@dataclass
class Pretrained:
    result: PretrainResult
    path: Path
    seconds: float

    @property
    def net(self):
        return self.result.net

    @property
    def spec(self):
        return self.result.net.spec


@pytest.fixture(scope="session")
def pretrained(tmp_path_factory) -> Pretrained:
    """Desk-scale objectness network (2000 images, 15 epochs, seed 1), trained once."""
    path = tmp_path_factory.mktemp("weights") / "desk.bin"
    t0 = time.perf_counter()
    result = pretrain(NetConfig(), PretrainConfig(), seed=1, out=path)
    return Pretrained(result, path, time.perf_counter() - t0)


_VERDICTS: list[str] = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        _VERDICTS.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)
