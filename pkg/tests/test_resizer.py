import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from learned_resizer import tensor as T
from learned_resizer.resizer import (
    ResizerConfig, build, flops_breakdown, flops_estimate, format_gflops, format_thousands, param_count,
)

# reference parameter counts, in thousands, r = 1..4
REFERENCE_THOUSANDS = {16: ["11.87", "16.48", "21.08", "25.69"], 32: ["38.08", "56.51", "74.94", "93.37"]}


def test_build_param_counts_from_examples():
    assert build(ResizerConfig(1, 16)).num_parameters() == 11872
    assert build(ResizerConfig(2, 32)).num_parameters() == 56512
    assert build(ResizerConfig(4, 32)).num_parameters() == 93376
    assert param_count(ResizerConfig(3, 16)) == 21088
    assert param_count(ResizerConfig(1, 32)) == 38080


@pytest.mark.parametrize("n", [16, 32])
@pytest.mark.parametrize("r", [1, 2, 3, 4])
def test_closed_form_equals_weight_enumeration(r, n):
    cfg = ResizerConfig(r, n)
    model = build(cfg)
    assert sum(int(np.prod(p.shape)) for p in model.parameters()) == param_count(cfg)
    assert format_thousands(param_count(cfg)) == REFERENCE_THOUSANDS[n][r - 1] + "k"


def test_build_is_deterministic_per_seed():
    a, b, c = build(ResizerConfig(), 3), build(ResizerConfig(), 3), build(ResizerConfig(), 4)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    assert not np.array_equal(a.params["head.conv7"].data, c.params["head.conv7"].data)


def test_config_validation():
    with pytest.raises(ValueError):
        ResizerConfig(r=0)


# Inception-v2 "Proposed" rows minus the 224 bilinear row (3.88)
# whole-model GFLOPs with the resizer in front of a 224x224 classifier, by input
# size; the classifier alone at 224x224 costs 3.88
REFERENCE_GFLOPS = {224: 5.07, 256: 5.15, 320: 5.35, 368: 5.52, 448: 5.86}


@pytest.mark.parametrize("size", sorted(REFERENCE_GFLOPS))
def test_flops_match_reference_deltas(size):
    cfg = ResizerConfig(1, 16, 224, 224)
    delta = REFERENCE_GFLOPS[size] - 3.88
    assert abs(flops_estimate(cfg, size, size) / 1e9 - delta) <= 0.01 + 1e-9


def test_flops_examples_render():
    cfg = ResizerConfig(1, 16, 224, 224)
    assert format_gflops(flops_estimate(cfg, 224, 224)) == "1.19 GFLOPs"
    assert format_gflops(flops_estimate(cfg, 448, 448)) == "1.98 GFLOPs"


def test_flops_match_conv_macs_of_built_model():
    cfg = ResizerConfig(2, 8, 10, 12)
    model = build(cfg)
    in_h, in_w = 20, 18
    macs = 0
    for name, p in model.params.items():
        oc, ic, kh, kw = p.shape
        pixels = in_h * in_w if name.startswith("head.") else cfg.out_h * cfg.out_w
        macs += oc * ic * kh * kw * pixels
    assert flops_estimate(cfg, in_h, in_w) == 2 * macs


def test_doubling_input_quadruples_head_only():
    cfg = ResizerConfig(1, 16, 224, 224)
    a = flops_breakdown(cfg, 224, 224)
    b = flops_breakdown(cfg, 448, 448)
    assert b["head"] == 4 * a["head"]
    assert b["trunk_tail"] == a["trunk_tail"]


def test_zero_weight_model_is_bilinear_resize(rng):
    model = build(ResizerConfig(1, 16, 12, 10))
    model.zero_weights()
    x = T.Tensor(rng.uniform(0, 1, (2, 3, 24, 17)))
    out = model(x, training=True)
    assert np.array_equal(out.data, T.bilinear_resize(x, 12, 10).data)
    out_eval = model(x, training=False)
    assert np.array_equal(out_eval.data, T.bilinear_resize(x, 12, 10).data)


def test_zero_weight_model_same_size_is_identity(rng):
    model = build(ResizerConfig(2, 8, 9, 9))
    model.zero_weights()
    x = T.Tensor(rng.uniform(0, 1, (1, 3, 9, 9)))
    assert np.array_equal(model(x).data, x.data)


@settings(max_examples=10, deadline=None)
@given(h=st.integers(7, 40), w=st.integers(7, 40))
def test_resolution_independence(h, w):
    model = build(ResizerConfig(1, 4, 8, 11), seed=1)
    with T.no_grad():
        out = model(T.Tensor(np.random.default_rng(h * w).uniform(0, 1, (2, 3, h, w))))
    assert out.shape == (2, 3, 8, 11)
    assert np.isfinite(out.data).all()


def test_output_size_override(rng):
    model = build(ResizerConfig(1, 4, 8, 8))
    with T.no_grad():
        out = model(T.Tensor(rng.uniform(0, 1, (1, 3, 16, 16))), out_size=(5, 20))
    assert out.shape == (1, 3, 5, 20)


def test_forward_rejects_non_rgb(rng):
    with pytest.raises(ValueError, match="3-channel"):
        build(ResizerConfig(1, 4, 8, 8))(T.Tensor(rng.uniform(0, 1, (1, 1, 16, 16))))


def test_output_is_not_clamped(rng):
    model = build(ResizerConfig(1, 16, 8, 8), seed=0)
    with T.no_grad():
        out = model(T.Tensor(rng.uniform(0, 1, (4, 3, 16, 16))))
    assert out.data.min() < 0 or out.data.max() > 1
