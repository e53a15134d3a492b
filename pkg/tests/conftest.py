import pytest

from specvox.dataio import (default_scene, generate_filter_bank, generate_scene,
                            hemisphere_cameras, synthesize_captures, view_assignment)
from specvox.spectral import SSF, SYNTHETIC_GRID, database_basis


def tiny_captures(n_views=6, n_test=2, n_filters=3, size=10, seed=0):
    """A checker scene seen by a few small cameras; cheap enough for unit tests."""
    grid = SYNTHETIC_GRID
    truth = generate_scene(default_scene(grid, seed), 16)
    bank = generate_filter_bank(grid, n_filters, seed=seed)
    basis, held = database_basis(grid, 4, iters=300, restarts=range(2))
    ssf = SSF(grid, held[0].response / held[0].response.sum(axis=0).max())
    cams = hemisphere_cameras(n_views + n_test, width=size, height=size, seed=seed)
    assign = view_assignment(n_views, n_test, bank.ids, seed)
    caps = synthesize_captures(truth, cams, bank, ssf, assign, seed, n_samples=48)
    return caps, truth, basis


@pytest.fixture(scope="session")
def tiny():
    return tiny_captures()


@pytest.fixture(scope="session")
def full_rank():
    return tiny_captures(n_views=15, n_test=0, n_filters=15)


# -- acceptance summary: one pass/fail line per criterion

_CRITERIA = {}
N_CRITERIA = 9


@pytest.fixture
def criterion():
    def record(n, ok, detail):
        _CRITERIA[n] = (bool(ok), detail)
        print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, f"criterion {n}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    ran = any("test_acceptance" in r.nodeid for reps in terminalreporter.stats.values()
              for r in reps if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _CRITERIA:
            ok, detail = _CRITERIA[n]
            terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n}: FAIL  no result (errored or not run)")
