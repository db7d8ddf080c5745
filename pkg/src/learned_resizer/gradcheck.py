"""Central finite-difference checks of tape gradients (float64)."""
import numpy as np

from .baselines import MiniClassifier
from .losses import cross_entropy_smoothed, emd_loss, smooth_label_batch
from .resizer import ResizerConfig, ResizerModel
from . import tensor as T


def check_gradients(fn, inputs, seed=0, eps=1e-6, max_coords=40):
    """Max scale-relative error between tape and finite-difference gradients.

    ``fn()`` must read ``inputs`` (tracked float64 tensors) and return a
    tensor; the scalar objective is ``sum(fn() * R)`` for a fixed random ``R``.
    At most ``max_coords`` coordinates per input are probed. The error is
    ``max|analytic - numeric| / max(max|analytic|, max|numeric|)`` over the
    probed coordinates.
    """
    rng = np.random.default_rng(seed)
    with T.fresh_tape() as tape:
        out = fn()
        proj = rng.standard_normal(out.shape)
        loss = T.sum_all(T.mul(out, T.Tensor(proj, dtype=np.float64)))
        tape.backward(loss)

    def objective():
        with T.no_grad():
            return float((fn().data * proj).sum())

    analytic, numeric = [], []
    for t in inputs:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            up = objective()
            flat[i] = orig - eps
            down = objective()
            flat[i] = orig
            numeric.append((up - down) / (2 * eps))
            analytic.append(grad.reshape(-1)[i])
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


def op_suite(seed=0, dtype=np.float64):
    """``name -> (fn, inputs)`` covering every differentiable op plus the full resizer."""
    rng = np.random.default_rng(seed)
    cases = {}

    def _leaf(rng, shape, scale=1.0):
        return T.Tensor(rng.standard_normal(shape) * scale, tracked=True, dtype=dtype)

    x = _leaf(rng, (2, 3, 8, 8))
    w = _leaf(rng, (4, 3, 3, 3))
    cases["conv2d"] = (lambda: T.conv2d(x, w), [x, w])
    x2 = _leaf(rng, (2, 3, 7, 7))
    w2 = _leaf(rng, (5, 3, 7, 7), 0.2)
    cases["conv2d_7x7"] = (lambda: T.conv2d(x2, w2), [x2, w2])
    x3 = _leaf(rng, (2, 3, 8, 8))
    w3 = _leaf(rng, (4, 3, 3, 3))
    cases["conv2d_stride2"] = (lambda: T.conv2d(x3, w3, stride=2), [x3, w3])

    xb = _leaf(rng, (4, 2, 5, 5), 2.0)
    state = T.BatchNormState(2)
    cases["batch_norm"] = (lambda: T.batch_norm(xb, state, True), [xb])
    xe = _leaf(rng, (4, 2, 5, 5))
    state_e = T.BatchNormState(2)
    T.batch_norm(T.Tensor(rng.standard_normal((4, 2, 5, 5)), dtype=dtype), state_e, True)
    cases["batch_norm_eval"] = (lambda: T.batch_norm(xe, state_e, False), [xe])

    xl = _leaf(rng, (2, 3, 4, 4))
    cases["leaky_relu"] = (lambda: T.leaky_relu(xl, 0.2), [xl])
    xr = _leaf(rng, (2, 3, 9, 7))
    cases["bilinear_down"] = (lambda: T.bilinear_resize(xr, 4, 5), [xr])
    xu = _leaf(rng, (2, 3, 4, 4))
    cases["bilinear_up"] = (lambda: T.bilinear_resize(xu, 7, 10), [xu])

    a = _leaf(rng, (2, 3, 4, 4))
    b = _leaf(rng, (2, 3, 4, 4))
    cases["add"] = (lambda: T.add(a, b), [a, b])
    xd = _leaf(rng, (2, 3, 4, 4))
    wd = _leaf(rng, (48, 5), 0.2)
    bd = _leaf(rng, (5,))
    cases["dense"] = (lambda: T.dense(xd, wd, bd), [xd, wd, bd])
    xg = _leaf(rng, (2, 3, 4, 4))
    cases["global_avg_pool"] = (lambda: T.global_avg_pool(xg), [xg])
    xs = _leaf(rng, (2, 10))
    cases["softmax"] = (lambda: T.softmax(xs), [xs])
    xm = _leaf(rng, (2, 3, 4, 4))
    cases["sigmoid"] = (lambda: T.sigmoid(xm), [xm])
    xn = T.Tensor(rng.uniform(0.5, 2.0, (3, 6)), tracked=True, dtype=dtype)
    cases["normalize_rows"] = (lambda: T.normalize_rows(xn), [xn])

    logits = _leaf(rng, (4, 10))
    targets = smooth_label_batch(rng.integers(0, 10, 4), 10, 0.1)
    cases["cross_entropy_smoothed"] = (lambda: cross_entropy_smoothed(T.softmax(logits), targets), [logits])
    logits_q = _leaf(rng, (4, 10))
    hist = rng.dirichlet(np.ones(10), size=4)
    cases["emd_loss"] = (lambda: emd_loss(T.softmax(logits_q), hist), [logits_q])

    resizer = ResizerModel(ResizerConfig(r=1, n=4, out_h=6, out_w=6), seed=seed).astype(dtype)
    xz = _leaf(rng, (1, 3, 8, 8))
    cases["resizer"] = (lambda: resizer(xz, training=True), [xz] + resizer.parameters())

    clf = MiniClassifier(num_classes=3, width=4, seed=seed).astype(dtype)
    xc = _leaf(rng, (3, 3, 8, 8))
    yc = smooth_label_batch([0, 1, 2], 3, 0.1)
    cases["mini_classifier_ce"] = (
        lambda: cross_entropy_smoothed(T.softmax(clf(xc, training=True)), yc),
        [clf.params["stem.conv"], clf.params["fc.w"], xc],
    )
    return cases


def run_suite(seed=0, max_coords=40):
    """Run every case in float64; returns ``name -> max relative error``."""
    with T.float64_mode():
        return {name: check_gradients(fn, inputs, seed=seed, max_coords=max_coords)
                for name, (fn, inputs) in op_suite(seed).items()}
