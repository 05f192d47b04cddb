import pytest

import runs

CRITERIA = {
    1: "gradient suite",
    2: "loss identities",
    3: "point-value sampling",
    4: "marching cubes",
    5: "chamfer and IoU oracles",
    6: "implicit overfit",
    7: "stage-1 overfit",
    8: "end-to-end",
    9: "decoder depth ablation",
    10: "determinism",
}

_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def accept():
    """Record one acceptance line; several calls for a criterion combine with AND."""
    def record(n: int, ok: bool, detail: str) -> None:
        prev = _results.get(n)
        if prev is not None:
            ok, detail = prev[0] and ok, f"{prev[1]}; {detail}"
        _results[n] = (bool(ok), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in _results:
            ok, detail = _results[n]
            tr.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d} {name}: {detail}")
        else:
            tr.write_line(f"[FAIL] {n:2d} {name}: not run")


@pytest.fixture(scope="session")
def sphere_run(tmp_path_factory):
    return runs.train_sphere(tmp_path_factory.mktemp("sphere_a"))


@pytest.fixture(scope="session")
def pipeline_run(tmp_path_factory):
    return runs.run_pipeline(tmp_path_factory.mktemp("pipeline_a"))
