"""Small downstream networks that consume the resizer's output.

``MiniClassifier`` is a three-stage residual CNN (widths c, 2c, 4c; stride-2
convs between stages) ending in global average pooling and one dense layer,
so it accepts any input of at least 8x8. ``MiniIqaHead`` is the same body with
10 outputs and a softmax, predicting a histogram over scores 1..10.
"""
import numpy as np

from .layers import Model, he_uniform
from .tensor import add, batch_norm, conv2d, dense, global_avg_pool, leaky_relu, softmax

SLOPE = 0.1


class MiniClassifier(Model):
    arch = "mini_classifier"

    def __init__(self, num_classes=10, width=16, seed=0):
        super().__init__()
        self.num_classes = num_classes
        self.width = width
        rng = np.random.default_rng(seed)

        def conv(name, cin, cout):
            return self.add_param(name, he_uniform(rng, (cout, cin, 3, 3), cin * 9))

        c = width
        conv("stem.conv", 3, c)
        self.add_bn("stem.bn", c)
        widths = [c, 2 * c, 4 * c]
        for s, w in enumerate(widths):
            if s > 0:
                conv(f"stage{s}.down", widths[s - 1], w)
                self.add_bn(f"stage{s}.down_bn", w)
            conv(f"stage{s}.conv_a", w, w)
            self.add_bn(f"stage{s}.bn_a", w)
            conv(f"stage{s}.conv_b", w, w)
            self.add_bn(f"stage{s}.bn_b", w)
        bound = 1.0 / np.sqrt(widths[-1])
        self.add_param("fc.w", rng.uniform(-bound, bound, (widths[-1], num_classes)).astype(np.float32))
        self.add_param("fc.b", np.zeros(num_classes, dtype=np.float32))

    def __call__(self, x, training=True):
        return self.logits(x, training=training)

    def logits(self, x, training=True):
        if x.shape[2] < 8 or x.shape[3] < 8:
            raise ValueError(f"{self.arch} needs inputs of at least 8x8, got {x.shape}")
        p, bn = self.params, self.bn
        h = leaky_relu(batch_norm(conv2d(x, p["stem.conv"]), bn["stem.bn"], training), SLOPE)
        for s in range(3):
            if s > 0:
                h = conv2d(h, p[f"stage{s}.down"], stride=2)
                h = leaky_relu(batch_norm(h, bn[f"stage{s}.down_bn"], training), SLOPE)
            u = leaky_relu(batch_norm(conv2d(h, p[f"stage{s}.conv_a"]), bn[f"stage{s}.bn_a"], training), SLOPE)
            u = batch_norm(conv2d(u, p[f"stage{s}.conv_b"]), bn[f"stage{s}.bn_b"], training)
            h = leaky_relu(add(h, u), SLOPE)
        return dense(global_avg_pool(h), p["fc.w"], p["fc.b"])

    def metadata(self):
        return {"arch": self.arch, "width": self.width, "num_classes": self.num_classes}


class MiniIqaHead(MiniClassifier):
    arch = "mini_iqa"

    def __init__(self, width=16, seed=0):
        super().__init__(num_classes=10, width=width, seed=seed)

    def __call__(self, x, training=True):
        return self.predict_distribution(x, training=training)

    def predict_distribution(self, x, training=True):
        return softmax(self.logits(x, training=training))


def classify(model, x, training=False):
    """Logits ``(N, K)``; eval mode by default (needs recorded batch-norm stats)."""
    return model.logits(x, training=training)


def predict_distribution(model, x, training=False):
    return model.predict_distribution(x, training=training)


def mean_scores(probs):
    """Expected score sum_k k * p_k over bins 1..K."""
    probs = np.asarray(probs)
    return probs @ np.arange(1, probs.shape[-1] + 1, dtype=probs.dtype)


def build_baseline(meta, seed=0):
    """Rebuild a baseline from its ``metadata()`` dict."""
    arch = meta.get("arch", "mini_classifier")
    if arch == "mini_classifier":
        return MiniClassifier(num_classes=meta.get("num_classes", 10), width=meta.get("width", 16), seed=seed)
    if arch == "mini_iqa":
        return MiniIqaHead(width=meta.get("width", 16), seed=seed)
    raise ValueError(f"unknown baseline arch {arch!r} (expected mini_classifier or mini_iqa)")
