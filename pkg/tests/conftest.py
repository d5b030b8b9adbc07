import numpy as np
import pytest

from tinydrop.experiment import DeskConfig, build_setup
from tinydrop.model import ViTConfig, ViTModel, init_weights

_CRITERIA: list[tuple[int, bool, str]] = []


def tiny_config(**kw) -> ViTConfig:
    base = dict(image_size=32, patch_size=8, dim=8, depth=1, heads=2, mlp_ratio=2.0, num_classes=3)
    base.update(kw)
    return ViTConfig(**base)


def tiny_model(seed=0, **kw) -> ViTModel:
    cfg = tiny_config(**kw)
    return ViTModel(cfg, init_weights(cfg, seed))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def desk():
    """Trained guidance/target pair plus splits; built once per session."""
    return build_setup(DeskConfig(seed=0))


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, passed, detail)``."""

    def record(n: int, passed: bool, detail: str) -> bool:
        _CRITERIA.append((n, bool(passed), detail))
        print(f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(_CRITERIA, key=lambda e: e[0]):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
