import functools
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qrprune import zoo  # noqa: E402

SUM_RTOL = 1e-6

# every contribution matrix collected anywhere in the run passes through here
COLLECTED = {"count": 0, "worst": 0.0}
ACCEPTANCE = {}


def column_sum_rel_error(A, B):
    """max_n |B_n - sum_c A_cn| / max(|B_n|, sum_c |A_cn|)."""
    B = np.asarray(B, dtype=np.float64).reshape(-1)
    diff = np.abs(B - A.sum(axis=0))
    scale = np.maximum(np.abs(B), np.abs(A).sum(axis=0))
    return float(np.max(diff / np.where(scale > 0, scale, 1.0), initial=0.0))


def _guarded(fn):
    @functools.wraps(fn)
    def wrapped(*args, **kwargs):
        cm = fn(*args, **kwargs)
        err = column_sum_rel_error(cm.A, cm.B)
        COLLECTED["count"] += 1
        COLLECTED["worst"] = max(COLLECTED["worst"], err)
        assert err <= SUM_RTOL, f"B differs from column sums of A by {err:.3g}"
        return cm
    return wrapped


def pytest_configure(config):
    import qrprune
    from qrprune import pruning, sampling

    for name in ("collect_contributions", "collect_joint_contributions"):
        wrapped = _guarded(getattr(sampling, name))
        for mod in (sampling, pruning, qrprune):
            setattr(mod, name, wrapped)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
    terminalreporter.write_line(
        f"contribution matrices checked for column sums: {COLLECTED['count']}, "
        f"worst relative error {COLLECTED['worst']:.2e}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def dup_net():
    return zoo.duplicate_channel_cnn(seed=0)


@pytest.fixture(scope="session")
def planted_net():
    return zoo.planted_redundancy_cnn(seed=0)


@pytest.fixture(scope="session")
def res_net():
    return zoo.bottleneck_cnn(seed=0)
