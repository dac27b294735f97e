import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def newton_mle(X, y, iters=100, tol=1e-12):
    """Unpenalized logistic MLE by plain Newton-Raphson (intercept first)."""
    A = np.column_stack([np.ones(len(y)), X])
    beta = np.zeros(A.shape[1])
    for _ in range(iters):
        p = 1.0 / (1.0 + np.exp(-(A @ beta)))
        grad = A.T @ (y - p)
        H = (A * (p * (1 - p))[:, None]).T @ A
        step = np.linalg.solve(H, grad)
        beta += step
        if np.max(np.abs(step)) < tol:
            break
    return beta


# Acceptance criteria register their outcome here; the terminal summary
# prints one line per criterion even when output capture is on.
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        ok, title, detail = ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d}. {title}: {detail}")
