"""Session-wide bookkeeping.

Every ``Solution`` built during the run (solver output or parsed file) and
every path handed to ``record_path`` is checked for ``delta <= delta'`` at
session end.  Acceptance lines collected by ``acceptance_line`` are echoed
in the terminal summary.
"""
from __future__ import annotations

import numpy as np
import pytest

from densewalk import solver
from densewalk.metrics import delta, delta_prime

PATHS: list[np.ndarray] = []
ACCEPTANCE: dict[str, str] = {}
SLACK = 1e-12


def record_path(path) -> None:
    PATHS.append(np.array(path, dtype=float, copy=True))


def acceptance_line(key: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[key] = f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}"
    print(ACCEPTANCE[key])


def path_violations(paths) -> list[tuple[float, float]]:
    bad = []
    for P in paths:
        if P.ndim == 1:
            P = P[:, None]
        if len(P) < 2:
            continue
        d, _ = delta(P)
        dp, _ = delta_prime(P)
        if d > dp + SLACK:
            bad.append((d, dp))
    return bad


_original_init = solver.Solution.__init__


def _recording_init(self, *args, **kwargs):
    _original_init(self, *args, **kwargs)
    record_path(self.path)


def pytest_configure(config):
    solver.Solution.__init__ = _recording_init


def pytest_sessionfinish(session, exitstatus):
    bad = path_violations(PATHS)
    session.config._delta_summary = (len(PATHS), bad)
    if bad and session.exitstatus == 0:
        session.exitstatus = 1


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    total, bad = getattr(config, "_delta_summary", (len(PATHS), path_violations(PATHS)))
    tr = terminalreporter
    tr.section("acceptance")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split()[0]), k)):
        tr.write_line(ACCEPTANCE[key])
    tr.write_line(
        f"{'PASS' if not bad else 'FAIL'} criterion 7 (session-wide): delta <= delta' on all {total} paths produced this session"
        + (f" ({len(bad)} violations, first {bad[0]})" if bad else "")
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
