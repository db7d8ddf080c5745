"""Datasets, the fixed-resolution pre-resize step, batching and generators.

Sources: CIFAR-10 binary batches, PNG directories (``<class>/<file>.png``),
and two seeded synthetic generators used by the desk-scale experiments.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from .tensor import Tensor, bilinear_resize, no_grad

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILE = "test_batch.bin"
NUM_BINS = 10


@dataclass
class Dataset:
    """Images in [0, 1] plus labels.

    ``images`` is an ``(N, 3, H, W)`` float32 array, or a list of ``(3, H, W)``
    arrays when sizes differ. ``labels`` holds class indices ``(N,)`` or rating
    histograms ``(N, 10)``.
    """

    images: object
    labels: np.ndarray
    split: str = "train"
    source: str = "synthetic_texture"
    num_classes: int = 10
    info: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def is_histogram(self):
        return np.asarray(self.labels).ndim == 2

    def subset(self, idx, split=None):
        idx = np.asarray(idx)
        if isinstance(self.images, np.ndarray):
            images = self.images[idx]
        else:
            images = [self.images[i] for i in idx]
        return Dataset(images, np.asarray(self.labels)[idx], split or self.split, self.source,
                       self.num_classes, dict(self.info))

    def validate(self):
        for img in self.images:
            if img.min() < 0 or img.max() > 1:
                raise ValueError(f"{self.source} image values must lie in [0, 1]")
        labels = np.asarray(self.labels)
        if labels.ndim == 1:
            if labels.min() < 0 or labels.max() >= self.num_classes:
                raise ValueError(f"{self.source} labels must lie in 0..{self.num_classes - 1}")
        elif not np.allclose(labels.sum(axis=1), 1, atol=1e-6) or (labels < 0).any():
            raise ValueError(f"{self.source} rating histograms must be non-negative and sum to 1")


@dataclass(frozen=True)
class PreResizeSpec:
    method: str = "bilinear"
    target_h: int = 32
    target_w: int = 32

    def __post_init__(self):
        if self.method not in ("bilinear", "bicubic"):
            raise ValueError(f"pre-resize method must be bilinear or bicubic, got {self.method!r}")

    def check_covers(self, out_h, out_w):
        """Resizer input resolution must be >= its output resolution."""
        if self.target_h < out_h or self.target_w < out_w:
            raise ValueError(
                f"pre-resize target {self.target_h}x{self.target_w} is smaller than the resizer output {out_h}x{out_w}"
            )


# --------------------------------------------------------------------- CIFAR-10


def decode_cifar10_bytes(raw, name="<bytes>"):
    if len(raw) % CIFAR_RECORD:
        raise ValueError(
            f"{name}: size {len(raw)} is not a multiple of {CIFAR_RECORD} bytes "
            "(expected CIFAR-10 binary records: 1 label byte + 3072 channel-planar RGB bytes)"
        )
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = arr[:, 0].astype(np.int64)
    images = arr[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / np.float32(255)
    return images, labels


def encode_cifar10_record(image, label):
    """Inverse of the loader for one ``(3, 32, 32)`` image in [0, 1]."""
    pixels = np.rint(np.asarray(image, dtype=np.float64) * 255).astype(np.uint8)
    return bytes([int(label)]) + pixels.reshape(-1).tobytes()


def load_cifar10_file(path):
    with open(path, "rb") as f:
        return decode_cifar10_bytes(f.read(), os.fspath(path))


def load_cifar10(path, split="train"):
    """Load the binary CIFAR-10 distribution (``cifar-10-batches-bin``)."""
    files = CIFAR_TRAIN_FILES if split == "train" else [CIFAR_TEST_FILE]
    images, labels = [], []
    for name in files:
        full = os.path.join(path, name)
        if not os.path.exists(full):
            raise FileNotFoundError(f"CIFAR-10 file not found: {full}")
        im, lb = load_cifar10_file(full)
        images.append(im)
        labels.append(lb)
    return Dataset(np.concatenate(images), np.concatenate(labels), "train" if split == "train" else "val",
                   "cifar10", 10)


# ------------------------------------------------------------------------- PNG


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / np.float32(255)
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def write_png(path, image):
    """Write a ``(3, H, W)`` image; values are clamped to [0, 1] here and only here."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    pixels = np.rint(arr.transpose(1, 2, 0) * 255).astype(np.uint8)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    Image.fromarray(pixels, "RGB").save(path)


def load_png_dir(path, split="train"):
    """``<class>/<file>.png`` layout; classes are sorted directory names.

    A ``histograms.json`` file mapping ``"<class>/<file>.png"`` to 10 bin
    weights turns the directory into a rating dataset.
    """
    hist_path = os.path.join(path, "histograms.json")
    hists = None
    if os.path.exists(hist_path):
        with open(hist_path) as f:
            hists = json.load(f)
    classes = sorted(d for d in os.listdir(path) if os.path.isdir(os.path.join(path, d)))
    if not classes:
        raise ValueError(f"{path}: no class subdirectories found (expected <class>/<file>.png)")
    images, labels, names = [], [], []
    for ci, cls in enumerate(classes):
        for fname in sorted(os.listdir(os.path.join(path, cls))):
            if not fname.lower().endswith(".png"):
                continue
            rel = f"{cls}/{fname}"
            images.append(read_png(os.path.join(path, cls, fname)))
            labels.append(hists[rel] if hists is not None else ci)
            names.append(rel)
    if not images:
        raise ValueError(f"{path}: no PNG files found")
    if len({im.shape for im in images}) == 1:
        images = np.stack(images)
    labels = np.asarray(labels, dtype=np.float64 if hists is not None else np.int64)
    return Dataset(images, labels, split, "png_dir", NUM_BINS if hists is not None else len(classes),
                   {"classes": classes, "files": names})


def save_png_dir(ds, path):
    """Write a dataset in the layout :func:`load_png_dir` reads."""
    classes = ds.info.get("classes") or [str(i) for i in range(ds.num_classes)]
    hists = {}
    for i, img in enumerate(ds.images):
        cls = "all" if ds.is_histogram else classes[int(ds.labels[i])]
        rel = f"{cls}/{i:06d}.png"
        write_png(os.path.join(path, rel), img)
        if ds.is_histogram:
            hists[rel] = [float(v) for v in ds.labels[i]]
    if ds.is_histogram:
        with open(os.path.join(path, "histograms.json"), "w") as f:
            json.dump(hists, f, indent=0, sort_keys=True)


# ---------------------------------------------------------------- resampling


def _cubic(t, a=-0.5):
    t = np.abs(t)
    return np.where(
        t <= 1,
        (a + 2) * t**3 - (a + 3) * t**2 + 1,
        np.where(t < 2, a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a, 0.0),
    )


def _cubic_matrix(in_size, out_size):
    src = (np.arange(out_size) + 0.5) * (in_size / out_size) - 0.5
    base = np.floor(src).astype(np.int64)
    frac = src - base
    m = np.zeros((out_size, in_size))
    for tap in range(-1, 3):
        idx = np.clip(base + tap, 0, in_size - 1)
        np.add.at(m, (np.arange(out_size), idx), _cubic(frac - tap))
    return m


def bicubic_resize(x, out_h, out_w):
    """Catmull-Rom (a = -0.5) resize, half-pixel aligned, edge-clamped.

    Forward only; used for data preparation. Accepts ``(..., H, W)`` arrays.
    """
    x = np.asarray(getattr(x, "data", x))
    in_h, in_w = x.shape[-2:]
    if (in_h, in_w) == (out_h, out_w):
        return x.copy()
    my = _cubic_matrix(in_h, out_h)
    mx = _cubic_matrix(in_w, out_w)
    out = np.einsum("ih,...hw,jw->...ij", my, x.astype(np.float64), mx)
    return out.astype(x.dtype)


def resize_images(images, spec):
    """Apply the fixed pre-resize to every image; returns ``(N, 3, th, tw)``."""
    th, tw = spec.target_h, spec.target_w
    if isinstance(images, np.ndarray) and images.shape[-2:] == (th, tw):
        return images.astype(np.float32, copy=False)
    out = np.empty((len(images), 3, th, tw), dtype=np.float32)
    with no_grad():
        for i, img in enumerate(images):
            if spec.method == "bicubic":
                out[i] = bicubic_resize(img.astype(np.float32), th, tw)
            else:
                out[i] = bilinear_resize(Tensor(img[None], dtype=np.float32), th, tw).data[0]
    return out


# ------------------------------------------------------------------- batching


class Batcher:
    """Pre-resizes a dataset once and serves shuffled or ordered batches.

    Training batches are reshuffled per epoch from ``(seed, epoch)`` and the
    last partial batch is dropped; evaluation batches keep dataset order and
    include the final partial batch.
    """

    def __init__(self, ds, pre, batch_size, seed=0):
        if len(ds) == 0:
            raise ValueError("cannot batch an empty dataset")
        if batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {batch_size}")
        self.ds = ds
        self.pre = pre
        self.batch_size = batch_size
        self.seed = seed
        self.images = resize_images(ds.images, pre)
        self.labels = np.asarray(ds.labels)

    def steps_per_epoch(self, train=True):
        n = len(self.labels)
        return n // self.batch_size if train else -(-n // self.batch_size)

    def epoch(self, epoch=0, train=True):
        n = len(self.labels)
        if train:
            order = np.random.default_rng([self.seed, epoch]).permutation(n)
            stop = n - n % self.batch_size
        else:
            order = np.arange(n)
            stop = n
        for start in range(0, stop, self.batch_size):
            idx = order[start:start + self.batch_size]
            yield Tensor(self.images[idx], dtype=np.float32), self.labels[idx]


def make_batches(ds, pre, batch_size, seed=0, epoch=0, train=True):
    """Generator over ``(Tensor[N, 3, th, tw], labels)`` for one epoch."""
    return Batcher(ds, pre, batch_size, seed).epoch(epoch, train)


# ----------------------------------------------------------------- generators


def _smooth_background(rng, n, size, lo=0.25, hi=0.75):
    """Per-channel low-frequency fields: 4x4 random grids, bilinearly upsampled."""
    coarse = rng.uniform(lo, hi, size=(n, 3, 4, 4)).astype(np.float32)
    with no_grad():
        return bilinear_resize(Tensor(coarse, dtype=np.float32), size, size).data


def gen_texture_dataset(n_per_class, size=32, seed=0, amplitude=(0.08, 0.16), split="train"):
    """Two classes told apart only by pixel-pair texture.

    Along one axis (x for class 0, y for class 1) each aligned pixel pair
    carries ``(+a, -a)`` or ``(-a, +a)``, the order drawn at random per pair;
    the pattern is constant along the other axis. Amplitude ``a`` is random
    per image and both classes share the same smooth background
    distribution. The energy sits near the source Nyquist frequency, far
    above the Nyquist limit after a 2x downscale. A half-pixel bilinear 2x
    downscale averages each pair, so the texture cancels exactly and the
    downscaled classes are indistinguishable; a Catmull-Rom downscale leaks
    ``a * (c_next - c_prev) / 16`` through its outer taps. Values stay inside
    [0.09, 0.91], so no clipping occurs.
    """
    if size < 16:
        raise ValueError(f"texture images need size >= 16, got {size}")
    if size % 2:
        raise ValueError(f"texture images need an even size, got {size}")
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    labels = np.repeat(np.arange(2), n_per_class)
    labels = labels[rng.permutation(n)]
    images = _smooth_background(rng, n, size)
    amp = rng.uniform(*amplitude, size=n).astype(np.float32)
    pair_sign = rng.choice(np.array([-1.0, 1.0], dtype=np.float32), size=(n, size // 2))
    profile = np.repeat(pair_sign, 2, axis=1) * (-1.0) ** np.arange(size, dtype=np.float32)
    profile = profile * amp[:, None]
    along_x = np.broadcast_to(profile[:, None, :], (n, size, size))
    along_y = np.broadcast_to(profile[:, :, None], (n, size, size))
    texture = np.where(labels[:, None, None] == 0, along_x, along_y).astype(np.float32)
    images = images + texture[:, None]
    return Dataset(images.astype(np.float32), labels, split, "synthetic_texture", 2,
                   {"classes": ["vertical", "horizontal"]})


def rating_histogram(mean, std=1.5, bins=NUM_BINS):
    """Discretized Gaussian over scores 1..bins, normalized to sum to 1."""
    scores = np.arange(1, bins + 1, dtype=np.float64)
    w = np.exp(-0.5 * ((scores - mean) / std) ** 2)
    return w / w.sum()


def iqa_mean_for_level(level):
    """Target mean score for degradation level in [0, 1]; strictly decreasing."""
    return 8.0 - 5.0 * np.asarray(level, dtype=np.float64)


def gen_iqa_dataset(n, seed=0, size=32, split="train"):
    """Textured images degraded by blur (sigma up to 2 px) plus light noise.

    The degradation level ``d`` is uniform in [0, 1]; blur sigma is ``2 d`` and
    noise std ``0.03 d``. Ground truth is a discretized Gaussian histogram
    whose mean ``8 - 5 d`` falls as blur grows.
    """
    rng = np.random.default_rng(seed)
    levels = rng.uniform(0.0, 1.0, size=n)
    base = _smooth_background(rng, n, size, 0.3, 0.7)
    detail = rng.uniform(-0.2, 0.2, size=(n, 1, size, size)).astype(np.float32)
    images = np.empty((n, 3, size, size), dtype=np.float32)
    for i in range(n):
        sharp = base[i] + detail[i]
        sigma = 2.0 * levels[i]
        blurred = gaussian_filter(sharp, sigma=(0, sigma, sigma), mode="reflect") if sigma > 0 else sharp
        noise = rng.normal(0.0, 0.03 * levels[i], size=sharp.shape)
        images[i] = np.clip(blurred + noise, 0.0, 1.0)
    hists = np.stack([rating_histogram(m) for m in iqa_mean_for_level(levels)])
    return Dataset(images, hists, split, "synthetic_iqa", NUM_BINS, {"levels": levels.tolist()})
