import numpy as np
import pytest

from meshretarget.geometry import apply_motion, build_rigid_mesh, check_foldover


def jittered_mesh(rng, width=224, height=224, rows=8, cols=8, amount=0.2):
    """Rigid mesh with every vertex moved by up to ``amount`` of a cell; always fold-over free."""
    base = build_rigid_mesh(width, height, rows, cols)
    cell = np.array([width / cols, height / rows])
    motion = rng.uniform(-amount, amount, size=base.vertices.shape) * cell
    mesh = apply_motion(base, motion)
    assert not check_foldover(mesh)
    return mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one acceptance line; returns ``ok`` so the caller can assert on it."""

    def record(number, ok, detail):
        _CRITERIA[number] = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(_CRITERIA[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
