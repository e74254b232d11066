from __future__ import annotations

import functools
from pathlib import Path

import numpy as np
import pytest

from sosinv.frontend import load_input, parse_program
from sosinv.sdp import SdpProblem

DATA = Path(__file__).resolve().parents[1] / "src" / "sosinv" / "data"

IDENTITY_PROGRAM = """
vars x1 x2;
init x1 in [0, 0], x2 in [0, 0];
property kappa = x1^2 + x2^2;
while (-1 <= 0) {
  x1, x2 = x1, x2;
}
"""


ACCEPTANCE_RESULTS: list = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)


def pytest_configure(config):
    config.addinivalue_line("markers", "property: randomized property suites (fixed seeds)")
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


@functools.lru_cache(maxsize=None)
def example(name: str):
    return load_input(DATA / f"{name}.ploop")


@functools.lru_cache(maxsize=None)
def identity_program():
    return parse_program(IDENTITY_PROGRAM)


@functools.lru_cache(maxsize=None)
def hierarchy(name: str, lo: int, hi: int):
    """Cached hierarchy runs shared across test modules (they are expensive)."""
    from sosinv.synth import run_hierarchy

    c, prop = example(name)
    return run_hierarchy(c, prop, lo, hi)


@functools.lru_cache(maxsize=None)
def step_result(name: str, m: int):
    from sosinv.synth import synthesize_step

    c, prop = example(name)
    return synthesize_step(c, prop, m)


def upper(A: np.ndarray, blk: int = 0) -> dict:
    n = A.shape[0]
    return {(blk, i, j): float(A[i, j]) for i in range(n) for j in range(i, n) if A[i, j] != 0.0}


def planted_sdp(rng: np.random.Generator):
    """Random SDP with a planted strictly complementary primal-dual pair.

    Returns ``(problem, optimal value)``.
    """
    n = int(rng.integers(3, 9))
    m = int(rng.integers(2, n * (n + 1) // 2))
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    r = int(rng.integers(1, n))
    lam = rng.uniform(0.5, 2.0, n)
    X = Q[:, :r] @ np.diag(lam[:r]) @ Q[:, :r].T
    S = Q[:, r:] @ np.diag(lam[r:]) @ Q[:, r:].T
    As = []
    for _ in range(m):
        B = rng.standard_normal((n, n))
        As.append((B + B.T) / 2)
    y = rng.standard_normal(m)
    C = sum(yk * A for yk, A in zip(y, As)) + S
    prob = SdpProblem([n], [upper(A) for A in As], [float(np.sum(A * X)) for A in As], upper(C))
    return prob, float(np.sum(C * X))


def planted_suite(count: int = 50, seed: int = 0):
    rng = np.random.default_rng(seed)
    return [planted_sdp(rng) for _ in range(count)]


# Analytic SDPs: (problem, optimal value)
def analytic_sdps():
    # min t s.t. t I - diag(1,2,3) >= 0.  In standard form this is the dual of
    # min <-A, X> s.t. tr X = 1, whose optimum is -t* = -3.
    max_eig = SdpProblem([3], [{(0, 0, 0): 1.0, (0, 1, 1): 1.0, (0, 2, 2): 1.0}], [1.0],
                         {(0, 0, 0): -1.0, (0, 1, 1): -2.0, (0, 2, 2): -3.0})
    # min tr X s.t. X[0,0] = 1 with a 1x1 block
    trace1 = SdpProblem([1], [{(0, 0, 0): 1.0}], [1.0], {(0, 0, 0): 1.0})
    # min x s.t. [[x, 1], [1, x]] >= 0: X[0,1] = 1, X[0,0] = X[1,1], minimise X[0,0]
    arrow = SdpProblem([2], [{(0, 0, 1): 0.5}, {(0, 0, 0): 1.0, (0, 1, 1): -1.0}], [1.0, 0.0],
                       {(0, 0, 0): 1.0})
    return {"max_eigenvalue": (max_eig, -3.0), "trace_1x1": (trace1, 1.0), "two_by_two": (arrow, 1.0)}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
