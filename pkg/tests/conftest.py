import numpy as np
import pytest

from somno.net import ModelConfig
from somno.synth import synthetic_hypnogram, write_sleep_edf_pair

# Small architecture that keeps the 3000-sample input but trains in seconds.
SMALL_CONFIG = ModelConfig(block_filters=(4, 8, 8), tail_filters=(8, 8), dense_units=8, head_filters=8)

# Gradient-check scale: 300-sample input, filters 4/8/8, dense 8.
TINY_CONFIG = ModelConfig(input_samples=300, block_filters=(4, 8, 8), block_kernels=(8, 8, 8),
                          tail_filters=(8, 8), tail_kernels=(8, 8), dense_units=8, head_filters=8)


@pytest.fixture(scope="session")
def small_config():
    return SMALL_CONFIG


@pytest.fixture(scope="session")
def tiny_config():
    return TINY_CONFIG


@pytest.fixture(scope="session")
def night_dir(tmp_path_factory):
    """Three short synthetic Sleep-EDF nights (subjects 400, 401, 402)."""
    d = tmp_path_factory.mktemp("nights")
    rng = np.random.default_rng(11)
    for i, night in enumerate((4001, 4011, 4021)):
        labels = synthetic_hypnogram(rng, cycles=1, lead_wake=70, tail_wake=70)
        write_sleep_edf_pair(d, night, labels, seed=100 + i)
    return d


@pytest.fixture(scope="session")
def night_paths(night_dir):
    return {int(p.name[2:6]): (p, night_dir / p.name.replace("E0-PSG", "EC-Hypnogram"))
            for p in sorted(night_dir.glob("*-PSG.edf"))}


_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""

    def record(ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {request.node.name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
