import time
from dataclasses import dataclass
from pathlib import Path

import pytest

from bilstm_ids.cli import main


@dataclass
class Run:
    dir: Path
    data: Path
    model: Path
    history: Path
    train_stdout: str
    seconds: float


@pytest.fixture(scope="session")
def trained_run(tmp_path_factory) -> Run:
    """500 synthetic flows, default model and hyperparameters (100 epochs, batch 32)."""
    import contextlib
    import io

    d = tmp_path_factory.mktemp("run")
    data, model, hist = d / "flows.csv", d / "model.blcn", d / "history.csv"
    assert main(["gen", "--out", str(data), "--per-class", "100", "--seed", "7"]) == 0
    buf = io.StringIO()
    start = time.perf_counter()
    with contextlib.redirect_stdout(buf):
        code = main(["train", "--data", str(data), "--out-model", str(model),
                     "--history", str(hist), "--seed", "7"])
    elapsed = time.perf_counter() - start
    assert code == 0, buf.getvalue()
    return Run(d, data, model, hist, buf.getvalue(), elapsed)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str, status: str | None = None) -> bool:
    status = status or ("PASS" if ok else "FAIL")
    ACCEPTANCE[criterion] = f"criterion {criterion}: {status} - {detail}"
    print(ACCEPTANCE[criterion])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
