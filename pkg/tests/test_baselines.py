import numpy as np
import pytest

from learned_resizer import tensor as T
from learned_resizer.baselines import MiniClassifier, MiniIqaHead, classify, mean_scores, predict_distribution
from learned_resizer.data import gen_iqa_dataset
from learned_resizer.gradcheck import check_gradients
from learned_resizer.losses import cross_entropy_smoothed, emd_loss, smooth_label_batch
from learned_resizer.optim import SGDMomentum


@pytest.mark.parametrize("size", [16, 24, 32])
def test_logit_shape_is_resolution_independent(rng, size):
    model = MiniClassifier(10, 8, seed=0)
    out = model(T.Tensor(rng.uniform(0, 1, (2, 3, size, size))))
    assert out.shape == (2, 10)


def test_rejects_tiny_inputs(rng):
    with pytest.raises(ValueError, match="8x8"):
        MiniClassifier(10, 8)(T.Tensor(rng.uniform(0, 1, (2, 3, 7, 8))))


def test_eval_before_training_raises(rng):
    with pytest.raises(RuntimeError, match="running statistics"):
        classify(MiniClassifier(10, 8), T.Tensor(rng.uniform(0, 1, (2, 3, 16, 16))))


def test_untrained_accuracy_is_chance():
    rng = np.random.default_rng(0)
    model = MiniClassifier(10, 8, seed=1)
    x = rng.uniform(0, 1, (1000, 3, 16, 16)).astype(np.float32)
    labels = np.repeat(np.arange(10), 100)
    with T.no_grad():
        preds = np.concatenate([model(T.Tensor(x[i:i + 100]), training=True).data.argmax(1) for i in range(0, 1000, 100)])
    acc = (preds == labels).mean()
    assert abs(acc - 0.10) <= 0.03


def test_duplicate_images_give_identical_rows_in_eval(rng):
    model = MiniClassifier(10, 8, seed=0)
    with T.no_grad():
        model(T.Tensor(rng.uniform(0, 1, (8, 3, 16, 16))), training=True)
        img = rng.uniform(0, 1, (1, 3, 16, 16))
        batch = np.concatenate([img, rng.uniform(0, 1, (2, 3, 16, 16)), img])
        out = classify(model, T.Tensor(batch)).data
    assert np.array_equal(out[0], out[3])


def test_classifier_cross_entropy_gradient_wrt_stem():
    with T.float64_mode():
        model = MiniClassifier(4, 4, seed=2).astype(np.float64)
        x = T.Tensor(np.random.default_rng(1).uniform(0, 1, (4, 3, 8, 8)), dtype=np.float64)
        targets = smooth_label_batch([0, 1, 2, 3], 4)
        err = check_gradients(lambda: cross_entropy_smoothed(T.softmax(model(x)), targets),
                              [model.params["stem.conv"]], max_coords=30)
    assert err < 1e-3


def test_iqa_rows_sum_to_one_and_mean_in_range(rng):
    model = MiniIqaHead(8, seed=0)
    probs = model(T.Tensor(rng.uniform(0, 1, (5, 3, 16, 16)))).data
    np.testing.assert_allclose(probs.sum(axis=1), 1, atol=1e-6)
    mu = mean_scores(probs)
    assert ((mu >= 1) & (mu <= 10)).all()
    with T.no_grad():
        assert predict_distribution(model, T.Tensor(rng.uniform(0, 1, (2, 3, 16, 16)))).shape == (2, 10)


def test_emd_decreases_over_50_steps():
    ds = gen_iqa_dataset(64, seed=3, size=16)
    model = MiniIqaHead(8, seed=0)
    opt = SGDMomentum(model.params, 0.9)
    x = T.Tensor(ds.images)
    losses = []
    for _ in range(50):
        with T.fresh_tape() as tape:
            loss = emd_loss(model(x, training=True), ds.labels)
            tape.backward(loss)
        opt.step(0.05)
        losses.append(loss.item())
    assert np.mean(losses[-5:]) < np.mean(losses[:5])
    assert losses[-1] < losses[0]
