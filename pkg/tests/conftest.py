import numpy as np
import pytest

from seascbf import lie


def series_exp(X, terms=30):
    """Truncated power series of the matrix exponential."""
    out = np.eye(X.shape[0])
    term = np.eye(X.shape[0])
    for k in range(1, terms):
        term = term @ X / k
        out = out + term
    return out


def random_pose(rng, dim=3, rot_scale=1.0, trans_scale=1.0):
    d = 3 if dim == 2 else 6
    xi = rng.normal(size=d)
    if dim == 2:
        xi[0] *= rot_scale
        xi[1:] *= trans_scale
    else:
        xi[:3] *= rot_scale
        xi[3:] *= trans_scale
    return lie.exp_group(xi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criterion number -> (passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {n}: {detail}")
