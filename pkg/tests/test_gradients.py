"""Tape gradients against central finite differences (float64) and float32 agreement."""
import numpy as np
import pytest

from learned_resizer import gradcheck
from learned_resizer import tensor as T
from learned_resizer.resizer import ResizerConfig, ResizerModel

SMOOTH_TOL = 1e-6

CASES = list(gradcheck.op_suite().keys())


@pytest.fixture(scope="module")
def suite_errors():
    return gradcheck.run_suite(seed=0)


@pytest.mark.parametrize("name", CASES)
def test_float64_gradients_match_finite_differences(suite_errors, name):
    assert suite_errors[name] < SMOOTH_TOL, f"{name}: {suite_errors[name]:.2e}"


@pytest.mark.parametrize("seed", [1, 2])
def test_suite_other_seeds(seed):
    errs = gradcheck.run_suite(seed=seed, max_coords=10)
    assert max(errs.values()) < SMOOTH_TOL


def test_resizer_gradcheck_on_1x3x8x8_input():
    with T.float64_mode():
        model = ResizerModel(ResizerConfig(r=1, n=16, out_h=8, out_w=8), seed=5).astype(np.float64)
        x = T.Tensor(np.random.default_rng(0).uniform(0, 1, (1, 3, 8, 8)), dtype=np.float64)
        err = gradcheck.check_gradients(lambda: model(x, training=True), model.parameters(), max_coords=8)
    assert err < 1e-3


def test_resizer_32_to_16_gradcheck():
    with T.float64_mode():
        model = ResizerModel(ResizerConfig(r=1, n=4, out_h=16, out_w=16), seed=2).astype(np.float64)
        x = T.Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 32, 32)), tracked=True, dtype=np.float64)
        err = gradcheck.check_gradients(lambda: model(x, training=True), [x] + model.parameters(), max_coords=6)
    assert err < 1e-3


def _tape_grads(fn, inputs, proj):
    with T.fresh_tape() as tape:
        out = fn()
        tape.backward(T.sum_all(T.mul(out, T.Tensor(proj.astype(out.dtype), dtype=out.dtype))))
    return [np.asarray(t.grad, dtype=np.float64) for t in inputs]


@pytest.mark.parametrize("name", [c for c in CASES if c not in ("batch_norm_eval",)])
def test_float32_gradients_agree_with_verified_float64(name):
    """32-bit tape gradients within 1e-3 relative of the finite-difference-verified 64-bit ones."""
    with T.float64_mode():
        fn64, in64 = gradcheck.op_suite(seed=3)[name]
        out = fn64()
        proj = np.random.default_rng(0).standard_normal(out.shape)
        g64 = _tape_grads(fn64, in64, proj)
    fn32, in32 = gradcheck.op_suite(seed=3, dtype=np.float32)[name]
    assert all(t.dtype == np.float32 for t in in32)
    g32 = _tape_grads(fn32, in32, proj)
    for a, b in zip(g32, g64):
        scale = max(np.abs(b).max(), 1e-12)
        assert np.abs(a - b).max() / scale < 1e-3
