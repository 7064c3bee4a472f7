from __future__ import annotations

import random
import sys
from pathlib import Path

import pytest
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from memplan.profiles import (  # noqa: E402
    ChunkConfig,
    HardwareProfile,
    ModelProfile,
    OperatorKind,
    OperatorRecord,
    PrecisionSpec,
)

KINDS = [OperatorKind.LINEAR, OperatorKind.BIAS, OperatorKind.LAYERNORM, OperatorKind.OTHER]


def make_profile(rng: random.Random, max_params: int = 10**7) -> ModelProfile:
    """A consistent small profile: dict_n <= 1e4, l_n <= 8, total params <= max_params."""
    e_n = rng.randint(1, 3)
    budget = rng.randint(e_n, max_params)
    ops = []
    for i in range(e_n):
        ops.append(OperatorRecord(f"emb{i}", OperatorKind.EMBEDDING, rng.randint(0, budget // (2 * e_n))))
    left = budget - sum(op.param_count for op in ops)
    for i in range(rng.randint(0, 12)):
        n = rng.randint(0, max(0, left // 4))
        left -= n
        ops.append(OperatorRecord(f"op{i}", rng.choice(KINDS), n))
    half = rng.choice([1, 2])
    full = rng.choice([half, 4])
    prec = PrecisionSpec(half, full, rng.choice([half, full]))
    embed_p = sum(op.param_count for op in ops if op.kind is OperatorKind.EMBEDDING)
    return ModelProfile(
        operators=tuple(ops),
        dict_n=rng.randint(1, 10**4),
        o_n=rng.randint(1, 1024),
        l_n=rng.randint(1, 8),
        e_n=e_n,
        embed_p=embed_p,
        other_p=sum(op.param_count for op in ops) - embed_p,
        lm_p=rng.randint(0, 10**7),
        precision=prec,
    )


def make_hardware(rng: random.Random, gpu_n: int = 1) -> HardwareProfile:
    m_base = rng.randint(0, 2**31)
    return HardwareProfile(
        gpu_n=gpu_n,
        m_total=m_base + rng.randint(1, 2**36),
        cu_p=rng.choice([2**20, 2**21, 2**22]),
        m_base=m_base,
    )


@st.composite
def profiles(draw, max_params: int = 10**7) -> ModelProfile:
    return make_profile(random.Random(draw(st.integers(0, 2**32))), max_params)


@st.composite
def setups(draw):
    seed = draw(st.integers(0, 2**32))
    rng = random.Random(seed)
    model = make_profile(rng)
    hw = make_hardware(rng)
    chunk = ChunkConfig(rng.randint(1, 2**22))
    return model, chunk, hw


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240611)


# -- acceptance summary -----------------------------------------------------

_CRITERIA: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = dict(report.user_properties).get("criterion")
    if name:
        _CRITERIA.append(("PASS" if report.passed else "FAIL", name))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for status, name in _CRITERIA:
        terminalreporter.write_line(f"{status}  {name}")
