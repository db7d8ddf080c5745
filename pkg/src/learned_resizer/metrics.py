"""Top-k error and correlation metrics."""
import numpy as np
from scipy.stats import rankdata


def top_k_error(logits, labels, k=1):
    """Fraction of rows whose label is not among the k highest scores.

    Ties are broken in favour of the lower class index.
    """
    scores = np.asarray(getattr(logits, "data", logits))
    labels = np.asarray(labels).reshape(-1)
    if not 1 <= k <= scores.shape[1]:
        raise ValueError(f"k must be in [1, {scores.shape[1]}], got {k}")
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    hit = (order == labels[:, None]).any(axis=1)
    return float(1.0 - hit.mean())


def _paired(x, y):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"correlation inputs differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise ValueError(f"correlation needs at least 3 pairs, got {x.size}")
    return x, y


def plcc(x, y):
    """Pearson linear correlation."""
    x, y = _paired(x, y)
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0 or sy == 0:
        raise ValueError("correlation is undefined for a constant input")
    return float(np.clip((xc * yc).sum() / (sx * sy), -1.0, 1.0))


def srcc(x, y):
    """Spearman rank correlation (average ranks for ties)."""
    x, y = _paired(x, y)
    return plcc(rankdata(x, method="average"), rankdata(y, method="average"))
