"""Desk-scale feature evaluation: toy dataset, linear classifier, pipeline table.

A seeded toy dataset paints small, off-center class signatures onto noisy
canvases, deliberately leaving most of each image uninformative so that
spatial weighting has signal to exploit.  Features are l2-normalized and
scored with a one-vs-rest logistic regression trained by full-batch
gradient descent (the same linear hypothesis class as an SVM, with no
external solver); the regularizer maps a slack constant C through
reg = 1 / (C * N), C fixed at 10.

Accuracy DIFFERENCES between pipelines are reported, never asserted:
a random-weight toy net carries no promise about their ordering.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .activeness import ActivenessRequest, neuron_activeness
from .image import RasterImage, to_input_tensor
from .net import ConvLayer, NetworkSpec, forward
from .tensor import spatial_average, spatial_max

SLACK_C = 10.0
INPUT_MEAN = 128.0

PIPELINE_CONFIGS = (
    "orig-avg",
    "orig-max",
    "next-p1",
    "next-p2",
    "last-p1",
    "last-p2",
)


@dataclass(frozen=True)
class LabeledFeatureSet:
    """Feature rows with labels and a fixed train/test split."""

    features: np.ndarray
    labels: np.ndarray
    train_idx: tuple[int, ...]
    test_idx: tuple[int, ...]

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2 or labels.ndim != 1 or feats.shape[0] != labels.shape[0]:
            raise ValueError(f"features {feats.shape} do not match labels {labels.shape}")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be nonnegative")
        train, test = set(self.train_idx), set(self.test_idx)
        if train & test:
            raise ValueError("train and test splits overlap")
        if train | test != set(range(feats.shape[0])):
            raise ValueError("splits must cover every row exactly once")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "train_idx", tuple(self.train_idx))
        object.__setattr__(self, "test_idx", tuple(self.test_idx))

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1


@dataclass(frozen=True)
class ToyDatasetSpec:
    """Deterministic image-classification toy problem.

    Each class paints a small gaussian blob at a class-specific off-center
    position, textured by a ripple whose frequency and orientation encode
    the class; the blob's color profile is the same for every class, so
    nothing global (mean color, total energy) separates them.  The rest of
    the canvas is uniform noise; per-sample jitter moves the blob by up to
    ``jitter`` pixels.
    """

    seed: int = 0
    classes: int = 3
    samples_per_class: int = 16
    image_size: tuple[int, int] = (16, 16)
    channels: int = 3
    blob_sigma: float = 2.0
    noise_level: int = 60
    jitter: int = 1

    def __post_init__(self):
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.samples_per_class < 2:
            raise ValueError("need at least two samples per class")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")


def toy_image(spec: ToyDatasetSpec, label: int, sample: int) -> RasterImage:
    """One deterministic sample of the toy dataset."""
    w, h = spec.image_size
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([spec.seed, label, sample])))
    canvas = rng.uniform(0.0, spec.noise_level, size=(h, w, spec.channels))

    angle = 2.0 * math.pi * label / spec.classes
    cx = w * (0.5 + 0.27 * math.cos(angle)) + rng.integers(-spec.jitter, spec.jitter + 1)
    cy = h * (0.5 + 0.27 * math.sin(angle)) + rng.integers(-spec.jitter, spec.jitter + 1)
    ys, xs = np.mgrid[0:h, 0:w]
    bump = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2.0 * spec.blob_sigma**2))
    freq = 1.5 + 1.25 * label
    orient = math.pi * label / spec.classes
    phase = math.cos(orient) * (xs - cx) + math.sin(orient) * (ys - cy)
    ripple = 0.7 + 0.3 * np.sin(2.0 * math.pi * freq * phase / w)
    mix = np.array([1.0, 0.85, 0.7][: spec.channels])  # identical for every class
    canvas += 195.0 * bump[:, :, None] * ripple[:, :, None] * mix[None, None, :]
    return RasterImage(pixels=np.clip(np.floor(canvas + 0.5), 0, 255).astype(np.uint8))


def toy_samples(spec: ToyDatasetSpec) -> tuple[list[RasterImage], np.ndarray, tuple, tuple]:
    """All images, labels, and a stratified half/half train/test split."""
    images, labels, train_idx, test_idx = [], [], [], []
    for label in range(spec.classes):
        for sample in range(spec.samples_per_class):
            idx = len(images)
            images.append(toy_image(spec, label, sample))
            labels.append(label)
            (train_idx if sample < spec.samples_per_class // 2 else test_idx).append(idx)
    return images, np.array(labels), tuple(train_idx), tuple(test_idx)


def l2_normalize(row: np.ndarray) -> np.ndarray:
    """Unit-norm copy of a vector; all-zero rows pass through unchanged."""
    row = np.asarray(row, dtype=np.float64)
    norm = np.linalg.norm(row)
    return row.copy() if norm == 0.0 else row / norm


def l2_normalize_rows(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    safe = np.where(norms == 0.0, 1.0, norms)
    return matrix / safe


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def train_linear(
    train: LabeledFeatureSet,
    reg: float | None = None,
    epochs: int = 300,
    lr: float = 1.0,
    track_loss: list | None = None,
) -> np.ndarray:
    """One-vs-rest logistic regression by full-batch gradient descent.

    Returns a (K, D+1) weight matrix, last column the intercept (which is
    not regularized).  Deterministic: zero init, fixed iteration count.
    """
    X = train.features[list(train.train_idx)]
    y = train.labels[list(train.train_idx)]
    if X.shape[0] == 0:
        raise ValueError("empty training split")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("training split must contain at least two classes")
    k = train.num_classes
    n, d = X.shape
    if reg is None:
        reg = 1.0 / (SLACK_C * n)
    Xb = np.hstack([X, np.ones((n, 1))])
    Y = (y[:, None] == np.arange(k)[None, :]).astype(np.float64)
    W = np.zeros((k, d + 1))
    mask = np.ones((1, d + 1))
    mask[0, -1] = 0.0  # intercept unregularized
    for _ in range(epochs):
        S = _sigmoid(Xb @ W.T)
        if track_loss is not None:
            eps = 1e-12
            bce = -(Y * np.log(S + eps) + (1 - Y) * np.log(1 - S + eps)).sum(axis=1).mean()
            track_loss.append(float(bce + reg * ((W * mask) ** 2).sum()))
        grad = (S - Y).T @ Xb / n + 2.0 * reg * (W * mask)
        W = W - lr * grad
    return W


def predict_linear(weights: np.ndarray, features: np.ndarray) -> np.ndarray:
    Xb = np.hstack([features, np.ones((features.shape[0], 1))])
    return (Xb @ weights.T).argmax(axis=1)


def accuracy(weights: np.ndarray, fs: LabeledFeatureSet, idx) -> float:
    idx = list(idx)
    pred = predict_linear(weights, fs.features[idx])
    return float((pred == fs.labels[idx]).mean())


def valid_targets(spec: NetworkSpec) -> list[int]:
    """Activation indices whose consuming layer is conv (activeness targets)."""
    return [t for t, layer in enumerate(spec.layers) if isinstance(layer, ConvLayer)]


def target_name(spec: NetworkSpec, t: int) -> str:
    return "input" if t == 0 else spec.names[t - 1]


def _pipeline_vectors(spec: NetworkSpec, trace, targets: list[int]) -> dict:
    vectors = {}
    for t in targets:
        x_t = trace.activation(t)
        vectors[(t, "orig-avg")] = spatial_average(x_t).values
        vectors[(t, "orig-max")] = spatial_max(x_t).values
        for sup in ("next", "last"):
            for p in (1, 2):
                req = ActivenessRequest(target_layer=t, supervision=sup, p=p, summarize="max")
                vectors[(t, f"{sup}-p{p}")] = neuron_activeness(spec, trace, req).feature.values
    return vectors


@dataclass(frozen=True)
class PipelineReport:
    """Accuracy table: one row per (target layer, configuration)."""

    rows: tuple  # (layer_name, config, dims, accuracy)
    dataset_seed: int
    classes: int
    train_size: int
    test_size: int

    def to_text(self) -> str:
        lines = [
            f"toy dataset: seed={self.dataset_seed} classes={self.classes} "
            f"train={self.train_size} test={self.test_size}",
            f"{'layer':<12} {'config':<10} {'dims':>5} {'accuracy':>9}",
        ]
        for name, config, dims, acc in self.rows:
            lines.append(f"{name:<12} {config:<10} {dims:>5d} {acc:>9.4f}")
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "dataset_seed": self.dataset_seed,
            "classes": self.classes,
            "train_size": self.train_size,
            "test_size": self.test_size,
            "rows": [
                {"layer": name, "config": config, "dims": dims, "accuracy": acc}
                for name, config, dims, acc in self.rows
            ],
        }


def compare_pipelines(
    dataset: ToyDatasetSpec,
    spec: NetworkSpec,
    targets: list[int] | None = None,
    epochs: int = 300,
    lr: float = 1.0,
    threads: int = 1,
) -> PipelineReport:
    """Test accuracy of original vs activeness-weighted features per layer.

    Six configurations per target layer mirror the standard comparison:
    original features under average and max pooling, then the weighted
    features for supervision next/last and norms p = 1/2.
    """
    w0, h0, d0 = spec.input_shape
    if dataset.image_size != (w0, h0) or dataset.channels != d0:
        raise ValueError(
            f"dataset images {dataset.image_size}x{dataset.channels} do not fit "
            f"network input {spec.input_shape}"
        )
    if targets is None:
        targets = valid_targets(spec)
    if not targets:
        raise ValueError("no valid target layers (need a conv layer)")

    images, labels, train_idx, test_idx = toy_samples(dataset)
    mean = [INPUT_MEAN] * dataset.channels

    def extract(img: RasterImage) -> dict:
        trace = forward(spec, to_input_tensor(img, mean))
        return _pipeline_vectors(spec, trace, targets)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(extract, images))
    else:
        per_image = [extract(img) for img in images]

    rows = []
    for t in targets:
        for config in PIPELINE_CONFIGS:
            feats = np.stack([vecs[(t, config)] for vecs in per_image])
            fs = LabeledFeatureSet(
                features=l2_normalize_rows(feats),
                labels=labels,
                train_idx=train_idx,
                test_idx=test_idx,
            )
            weights = train_linear(fs, epochs=epochs, lr=lr)
            rows.append((target_name(spec, t), config, feats.shape[1], accuracy(weights, fs, test_idx)))
    return PipelineReport(
        rows=tuple(rows),
        dataset_seed=dataset.seed,
        classes=dataset.classes,
        train_size=len(train_idx),
        test_size=len(test_idx),
    )


def save_feature_set(features: np.ndarray, labels: np.ndarray, path) -> None:
    """Write features+labels: ASCII "N D K" line, f32 LE rows, then i32 LE labels."""
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n, d = features.shape
    k = int(labels.max()) + 1 if labels.size else 0
    with open(path, "wb") as fh:
        fh.write(f"{n} {d} {k}\n".encode("ascii"))
        fh.write(features.astype("<f4").tobytes())
        fh.write(labels.astype("<i4").tobytes())


def load_feature_set(path) -> tuple[np.ndarray, np.ndarray, int]:
    """Read the feature-file format back: (features, labels, num_classes)."""
    with open(path, "rb") as fh:
        header = fh.readline()
        try:
            n, d, k = (int(v) for v in header.split())
        except ValueError:
            raise ValueError(f"malformed feature header {header!r}") from None
        body = fh.read()
    need = 4 * n * d + 4 * n
    if len(body) != need:
        raise ValueError(f"feature payload length {len(body)} != expected {need}")
    feats = np.frombuffer(body[: 4 * n * d], dtype="<f4").astype(np.float64).reshape(n, d)
    labels = np.frombuffer(body[4 * n * d :], dtype="<i4").astype(np.int64)
    return feats, labels, k
