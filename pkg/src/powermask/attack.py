"""The adversary: trace preprocessing and a small perceptron classifier.

Pipeline, end to end:

1. slice the measured-power series into non-overlapping segments,
2. average disjoint 5-sample blocks inside each segment,
3. quantize each averaged value into one of 10 levels over a fixed
   [quant_min, quant_max] range, one-hot encoded,
4. feed the flattened one-hot matrix to a two-hidden-layer ReLU network
   with a log-softmax head, trained by mini-batch gradient descent on the
   negative log-likelihood.

The quantization range is the same for every condition so the features
never smuggle in condition-specific normalization.  Backpropagation is
written out by hand; grad_check compares it against central finite
differences and is wired into the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_LEVELS = 10
BLOCK = 5                     # samples averaged per feature position

DEFAULT_HIDDEN = (64, 32)
DEFAULT_EPOCHS = 80
DEFAULT_LEARN_RATE = 0.08
DEFAULT_BATCH = 32


@dataclass(frozen=True)
class SampleVector:
    """One classifier input: flattened one-hot features and the true label."""

    features: np.ndarray      # (positions * N_LEVELS,) of {0.0, 1.0}
    label: int


def preprocess(trace, segment_length: int, quant_min: float,
               quant_max: float) -> list:
    """Cut a trace into SampleVectors; shorter than one segment gives []."""
    if segment_length % BLOCK != 0:
        raise ValueError(f"segment_length must be divisible by {BLOCK}")
    if not quant_min < quant_max:
        raise ValueError("quant_min must be below quant_max")
    series = np.asarray(trace.measured_w, dtype=float)
    positions = segment_length // BLOCK
    out = []
    for start in range(0, series.size - segment_length + 1, segment_length):
        window = series[start:start + segment_length]
        means = window.reshape(positions, BLOCK).mean(axis=1)
        levels = np.floor(N_LEVELS * (means - quant_min)
                          / (quant_max - quant_min)).astype(int)
        np.clip(levels, 0, N_LEVELS - 1, out=levels)
        hot = np.zeros((positions, N_LEVELS))
        hot[np.arange(positions), levels] = 1.0
        out.append(SampleVector(features=hot.ravel(), label=trace.app_id))
    return out


# ---------------------------------------------------------------------------
# Model


@dataclass
class Mlp:
    """Two hidden ReLU layers, log-softmax output.

    ``labels`` maps output row -> class id, fixed at init so a model stays
    meaningful across datasets.  Weights are (fan_out, fan_in).
    """

    labels: tuple
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    @property
    def layer_sizes(self) -> tuple:
        return (self.w1.shape[1], self.w1.shape[0], self.w2.shape[0],
                self.w3.shape[0])


def init_mlp(n_features: int, labels, hidden=DEFAULT_HIDDEN,
             seed: int = 0) -> Mlp:
    """He-scaled random init; class order fixed to sorted unique labels."""
    labels = tuple(sorted(set(int(l) for l in labels)))
    if len(labels) < 2:
        raise ValueError("need at least 2 classes")
    h1, h2 = hidden
    rng = np.random.default_rng(seed)

    def layer(fan_out, fan_in):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        return w, np.zeros(fan_out)

    w1, b1 = layer(h1, n_features)
    w2, b2 = layer(h2, h1)
    w3, b3 = layer(len(labels), h2)
    return Mlp(labels, w1, b1, w2, b2, w3, b3)


def _log_softmax(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=1, keepdims=True))


def forward(mlp: Mlp, x: np.ndarray) -> np.ndarray:
    """Log-probabilities, shape (n, classes), for inputs (n, features)."""
    x = np.atleast_2d(x)
    a1 = np.maximum(x @ mlp.w1.T + mlp.b1, 0.0)
    a2 = np.maximum(a1 @ mlp.w2.T + mlp.b2, 0.0)
    return _log_softmax(a2 @ mlp.w3.T + mlp.b3)


def _loss_and_grads(mlp: Mlp, x: np.ndarray, y_rows: np.ndarray):
    """Mean NLL and its gradients for a batch; y_rows are output-row indices."""
    n = x.shape[0]
    z1 = x @ mlp.w1.T + mlp.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ mlp.w2.T + mlp.b2
    a2 = np.maximum(z2, 0.0)
    logp = _log_softmax(a2 @ mlp.w3.T + mlp.b3)
    loss = -logp[np.arange(n), y_rows].mean()

    # d(loss)/d(logits) = (softmax - onehot) / n
    dz3 = np.exp(logp)
    dz3[np.arange(n), y_rows] -= 1.0
    dz3 /= n
    gw3 = dz3.T @ a2
    gb3 = dz3.sum(axis=0)
    dz2 = (dz3 @ mlp.w3) * (z2 > 0.0)
    gw2 = dz2.T @ a1
    gb2 = dz2.sum(axis=0)
    dz1 = (dz2 @ mlp.w2) * (z1 > 0.0)
    gw1 = dz1.T @ x
    gb1 = dz1.sum(axis=0)
    return loss, (gw1, gb1, gw2, gb2, gw3, gb3)


def predict(mlp: Mlp, samples) -> np.ndarray:
    """Predicted class ids for a list of SampleVector."""
    x = np.stack([s.features for s in samples])
    rows = forward(mlp, x).argmax(axis=1)
    lab = np.asarray(mlp.labels)
    return lab[rows]


def accuracy(mlp: Mlp, samples) -> float:
    truth = np.array([s.label for s in samples])
    return float(np.mean(predict(mlp, samples) == truth))


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainReport:
    train_accuracy: float
    val_accuracy: float
    test_accuracy: float
    epoch_losses: tuple
    test_samples: tuple       # held-out SampleVectors, untouched by training


def stratified_split(samples, fractions=(0.6, 0.2, 0.2), seed: int = 0):
    """Per-class shuffle and cut into train/val/test lists."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    by_class: dict = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s)
    parts: tuple = ([], [], [])
    for label in sorted(by_class):
        group = by_class[label]
        order = rng.permutation(len(group))
        n_train = int(round(fractions[0] * len(group)))
        n_val = int(round(fractions[1] * len(group)))
        cuts = (order[:n_train], order[n_train:n_train + n_val],
                order[n_train + n_val:])
        for part, idx in zip(parts, cuts):
            part.extend(group[i] for i in idx)
    return parts


def train(mlp: Mlp, samples, epochs: int = DEFAULT_EPOCHS,
          learn_rate: float = DEFAULT_LEARN_RATE,
          batch_size: int = DEFAULT_BATCH, seed: int = 0,
          fractions=(0.6, 0.2, 0.2)):
    """Fit in place on a stratified 60/20/20 split; returns (mlp, report).

    Plain mini-batch gradient descent on the mean negative log-likelihood.
    A NaN loss aborts with a hint to lower learn_rate.
    """
    present = {s.label for s in samples}
    missing = sorted(set(mlp.labels) - present)
    if missing:
        raise ValueError(f"dataset is missing classes {missing}")
    train_set, val_set, test_set = stratified_split(samples, fractions, seed)
    row_of = {label: i for i, label in enumerate(mlp.labels)}
    x = np.stack([s.features for s in train_set])
    y = np.array([row_of[s.label] for s in train_set])
    rng = np.random.default_rng(seed + 1)
    params = ("w1", "b1", "w2", "b2", "w3", "b3")
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        epoch_loss = 0.0
        for lo in range(0, len(y), batch_size):
            batch = order[lo:lo + batch_size]
            loss, grads = _loss_and_grads(mlp, x[batch], y[batch])
            if not np.isfinite(loss):
                raise ValueError(
                    "training diverged (loss is not finite); lower learn_rate")
            epoch_loss += loss * len(batch)
            for name, g in zip(params, grads):
                getattr(mlp, name)[...] -= learn_rate * g
        losses.append(epoch_loss / len(y))
    report = TrainReport(
        train_accuracy=accuracy(mlp, train_set),
        val_accuracy=accuracy(mlp, val_set) if val_set else float("nan"),
        test_accuracy=accuracy(mlp, test_set) if test_set else float("nan"),
        epoch_losses=tuple(losses),
        test_samples=tuple(test_set))
    return mlp, report


def grad_check(mlp: Mlp, sample: SampleVector, epsilon: float = 1e-5,
               n_params: int = 120, seed: int = 0) -> float:
    """Max relative error between backprop and central differences.

    Probes ``n_params`` randomly chosen weights/biases (at least 100 per
    the correctness contract this guards).
    """
    if not 1e-6 <= epsilon <= 1e-3:
        raise ValueError("epsilon outside [1e-6, 1e-3]")
    x = np.atleast_2d(sample.features)
    y = np.array([mlp.labels.index(sample.label)])
    _, grads = _loss_and_grads(mlp, x, y)
    names = ("w1", "b1", "w2", "b2", "w3", "b3")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(max(n_params, 100)):
        k = rng.integers(len(names))
        arr = getattr(mlp, names[k])
        idx = tuple(rng.integers(s) for s in arr.shape)
        keep = arr[idx]
        arr[idx] = keep + epsilon
        up, _ = _loss_and_grads(mlp, x, y)
        arr[idx] = keep - epsilon
        dn, _ = _loss_and_grads(mlp, x, y)
        arr[idx] = keep
        fd = (up - dn) / (2.0 * epsilon)
        an = grads[k][idx]
        err = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, float(err))
    return worst


def confusion(mlp: Mlp, samples) -> np.ndarray:
    """Row-normalized class-by-class matrix in mlp.labels order.

    Row i, column j is the fraction of true-class-i samples predicted as
    class j; each row sums to 1.  With a class-balanced testset the
    diagonal mean equals overall accuracy.
    """
    if not samples:
        raise ValueError("empty testset")
    present = {s.label for s in samples}
    missing = sorted(set(mlp.labels) - present)
    if missing:
        raise ValueError(f"testset is missing classes {missing}")
    row_of = {label: i for i, label in enumerate(mlp.labels)}
    k = len(mlp.labels)
    counts = np.zeros((k, k))
    guesses = predict(mlp, samples)
    for s, g in zip(samples, guesses):
        counts[row_of[s.label], row_of[int(g)]] += 1.0
    return counts / counts.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# Persistence


def save_mlp(mlp: Mlp, path) -> None:
    np.savez(path, labels=np.asarray(mlp.labels), w1=mlp.w1, b1=mlp.b1,
             w2=mlp.w2, b2=mlp.b2, w3=mlp.w3, b3=mlp.b3)


def load_mlp(path) -> Mlp:
    with np.load(path) as z:
        return Mlp(labels=tuple(int(l) for l in z["labels"]),
                   w1=z["w1"], b1=z["b1"], w2=z["w2"], b2=z["b2"],
                   w3=z["w3"], b3=z["b3"])


def save_samples(samples, path) -> None:
    """Dataset to one npz: features packed as uint8, labels as int array."""
    feats = np.stack([s.features for s in samples]).astype(np.uint8)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    np.savez(path, features=feats, labels=labels)


def load_samples(path) -> list:
    with np.load(path) as z:
        feats = z["features"].astype(float)
        labels = z["labels"]
    return [SampleVector(features=f, label=int(l))
            for f, l in zip(feats, labels)]
