import numpy as np
import pytest

from gradlens.defense import LabeledBatch
from gradlens.gradcore import AttackModel, MaliciousLayer, init_model
from gradlens.imaging import Image
from gradlens.synthetic import gen_synthetic


def random_model(seed: int, d: int = 12, n: int = 4, k: int = 3, bias_shift: float = 0.0) -> AttackModel:
    rng = np.random.default_rng(seed)
    w = rng.normal(size=(n, d))
    b = rng.normal(size=n) + bias_shift
    return AttackModel(MaliciousLayer(w, b), rng.normal(size=(k, n)), rng.normal(size=k))


def random_batch(seed: int, count: int, shape=(2, 2, 3), k: int = 3) -> LabeledBatch:
    rng = np.random.default_rng(seed)
    images = [Image(rng.uniform(size=shape)) for _ in range(count)]
    return LabeledBatch(images, rng.integers(0, k, size=count).tolist())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def synth8():
    return gen_synthetic(1, 8, (8, 8, 3), 4)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, line, elapsed, budget = RESULTS[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {line} ({elapsed:.1f}s / {budget:g}s)")
