import os

# single-threaded BLAS keeps reductions in a fixed order (determinism checks)
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from learned_resizer import tensor as T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _clean_tape():
    T.active_tape().clear()
    yield
    T.active_tape().clear()


def naive_conv2d(x, w, stride=1):
    """Six nested loops, zero padding k//2; the reference for conv2d."""
    n, c, h, wd = x.shape
    oc, ic, kh, kw = w.shape
    pad = kh // 2
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oc, oh, ow))
    for b in range(n):
        for o in range(oc):
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(c):
                        for ki in range(kh):
                            for kj in range(kw):
                                y = i * stride + ki - pad
                                xx = j * stride + kj - pad
                                if 0 <= y < h and 0 <= xx < wd:
                                    acc += x[b, ci, y, xx] * w[o, ci, ki, kj]
                    out[b, o, i, j] = acc
    return out


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """``report(num, title, ok, detail)`` prints and records one PASS/FAIL/NOT VERIFIED line."""

    def _report(num, title, ok, detail=""):
        status = {True: "PASS", False: "FAIL", None: "NOT VERIFIED"}[ok]
        line = f"criterion {num:>2} {status:<12} {title}" + (f" -- {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
