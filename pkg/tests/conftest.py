import numpy as np
import pytest

from olr import tensor as T
from olr.tensor import Tensor


def finite_difference_error(fn, inputs, seed=0, eps=1e-5):
    """Max relative error of analytic vs central-difference gradients.

    ``fn`` maps Tensors to a Tensor; the scalar objective is a fixed random
    projection of its output so every output entry is exercised.
    """
    rng = np.random.default_rng(seed)
    xs = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = fn(*xs)
    proj = rng.standard_normal(out.shape)
    analytic = T.grad((out * proj).sum(), xs)
    worst = 0.0
    for x, g in zip(xs, analytic):
        num = np.zeros_like(x.data)
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            fp = float((fn(*xs).data * proj).sum())
            flat[i] = old - eps
            fm = float((fn(*xs).data * proj).sum())
            flat[i] = old
            num.reshape(-1)[i] = (fp - fm) / (2 * eps)
        scale = max(np.abs(num).max(), np.abs(g).max(), 1e-8)
        worst = max(worst, float(np.abs(num - g).max() / scale))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# criterion number -> (title, passed, detail), filled in by test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:2d}. {title}: {detail}")
