"""Small 1D CNN (conv -> maxpool -> dropout -> dense/ReLU -> dense/sigmoid) in numpy.

The hidden dense layer doubles as the feature extractor.  Gradients are
computed analytically; training uses Adam on a per-class binary
cross-entropy, matching a Keras ``Sequential`` of the same shape.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import EmptyClass, LengthMismatch, ValidationError
from .synth import Waveform

log = logging.getLogger(__name__)

PARAM_NAMES = ("conv_w", "conv_b", "dense1_w", "dense1_b", "dense2_w", "dense2_b")
BCE_EPS = 1e-12


@dataclass
class CnnModel:
    input_length: int
    n_classes: int
    params: dict[str, np.ndarray]
    kernel: int = 3
    filters: int = 16
    hidden: int = 16
    pool: int = 2
    dropout_rate: float = 0.2
    # fixed (non-trainable) gain applied to every input record
    input_scale: float = 1.0

    @property
    def dtype(self):
        return self.params["dense1_w"].dtype

    def astype(self, dtype) -> "CnnModel":
        out = self.copy()
        out.params = {k: v.astype(dtype) for k, v in self.params.items()}
        return out

    @property
    def conv_length(self) -> int:
        return self.input_length - self.kernel + 1

    @property
    def pooled_length(self) -> int:
        return self.conv_length // self.pool

    @property
    def flatten_dim(self) -> int:
        return self.filters * self.pooled_length

    def parameter_counts(self) -> dict[str, int]:
        p = self.params
        counts = {
            "conv": p["conv_w"].size + p["conv_b"].size,
            "dense1": p["dense1_w"].size + p["dense1_b"].size,
            "dense2": p["dense2_w"].size + p["dense2_b"].size,
        }
        counts["total"] = sum(counts.values())
        return counts

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        return [
            ("Conv1D", (self.conv_length, self.filters)),
            ("MaxPooling1D", (self.pooled_length, self.filters)),
            ("Dropout", (self.pooled_length, self.filters)),
            ("Flatten", (self.flatten_dim,)),
            ("Dense (ReLU)", (self.hidden,)),
            ("Dense (Sigmoid)", (self.n_classes,)),
        ]

    def summary(self) -> str:
        counts = self.parameter_counts()
        per_layer = [counts["conv"], 0, 0, 0, counts["dense1"], counts["dense2"]]
        lines = [f"{'Layer (type)':<18}{'Output shape':<16}{'Param #':>10}"]
        for (name, shape), n in zip(self.layer_shapes(), per_layer):
            lines.append(f"{name:<18}{' x '.join(map(str, shape)):<16}{n:>10}")
        lines.append(f"{'Total trainable parameters':<34}{counts['total']:>10}")
        return "\n".join(lines)

    def copy(self) -> "CnnModel":
        return copy.deepcopy(self)

    @classmethod
    def initialize(cls, input_length: int = 1500, n_classes: int = 4, seed: int = 0, *,
                   kernel: int = 3, filters: int = 16, hidden: int = 16, pool: int = 2,
                   dropout_rate: float = 0.2, dtype=np.float64) -> "CnnModel":
        """He-uniform conv/dense1, Glorot-uniform dense2, zero biases."""
        if input_length < kernel + pool - 1:
            raise ValidationError("input too short for the network")
        rng = np.random.default_rng(seed)
        flat = filters * ((input_length - kernel + 1) // pool)

        def he(fan_in, shape):
            lim = math.sqrt(6.0 / fan_in)
            return rng.uniform(-lim, lim, shape)

        lim2 = math.sqrt(6.0 / (hidden + n_classes))
        params = {
            "conv_w": he(kernel, (kernel, filters)),
            "conv_b": np.zeros(filters),
            "dense1_w": he(flat, (flat, hidden)),
            "dense1_b": np.zeros(hidden),
            "dense2_w": rng.uniform(-lim2, lim2, (hidden, n_classes)),
            "dense2_b": np.zeros(n_classes),
        }
        params = {k: v.astype(dtype) for k, v in params.items()}
        return cls(input_length, n_classes, params, kernel, filters, hidden, pool, dropout_rate)


def _as_batch(model: CnnModel, x) -> np.ndarray:
    if isinstance(x, Waveform):
        x = x.samples[None, :]
    elif isinstance(x, (list, tuple)) and x and isinstance(x[0], Waveform):
        x = np.stack([w.samples for w in x])
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.input_length:
        raise LengthMismatch(f"expected {model.input_length} samples, got {x.shape[1]}")
    return x


def _is_single(w) -> bool:
    if isinstance(w, Waveform):
        return True
    if isinstance(w, (list, tuple)):
        return False
    return np.ndim(w) == 1


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ForwardCache:
    x: np.ndarray
    pooled: np.ndarray  # relu(max-pooled conv) before dropout, (n, filters, pooled_length)
    pool_idx: np.ndarray  # winning offset inside each pooling window
    mask: np.ndarray | None
    flat: np.ndarray
    h_pre: np.ndarray
    features: np.ndarray
    probs: np.ndarray


def _phase_view(x: np.ndarray, start: int, model: CnnModel) -> np.ndarray:
    # samples start, start+pool, ... aligned with the pooled grid
    return x[:, start:start + model.pool * model.pooled_length:model.pool]


def forward_batch(model: CnnModel, x, training: bool = False,
                  rng: np.random.Generator | int | None = None) -> ForwardCache:
    p = model.params
    x = _as_batch(model, x)
    if model.input_scale != 1.0:
        x = x * model.dtype.type(model.input_scale)
    n = x.shape[0]
    w, b = p["conv_w"], p["conv_b"]
    # Convolution is evaluated separately for each offset inside the pooling
    # window, so max-pooling reduces to an elementwise max of these phases.
    # relu and max commute, hence pooling is done before the activation.
    shape = (n, model.filters, model.pooled_length)
    pooled = np.empty(shape, dtype=x.dtype)
    pool_idx = np.zeros(shape, dtype=np.int8)
    phase = np.empty(shape, dtype=x.dtype)
    for j in range(model.pool):
        out = pooled if j == 0 else phase
        np.multiply(_phase_view(x, j, model)[:, None], w[0][:, None], out=out)
        for k in range(1, model.kernel):
            out += _phase_view(x, j + k, model)[:, None] * w[k][:, None]
        out += b[:, None]
        if j:
            # strict comparison keeps the earliest position on ties
            better = phase > pooled
            np.maximum(pooled, phase, out=pooled)
            # masked copies are slow in numpy; blend the offsets arithmetically
            pool_idx += better * (j - pool_idx)
    np.maximum(pooled, 0, out=pooled)
    act = pooled
    mask = None
    if training and model.dropout_rate > 0:
        rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        keep = 1.0 - model.dropout_rate
        mask = (rng.random(shape, dtype=x.dtype) < keep) * x.dtype.type(1.0 / keep)
        act = pooled * mask
    flat = act.reshape(n, -1)
    h_pre = flat @ p["dense1_w"] + p["dense1_b"]
    feats = np.maximum(h_pre, 0)
    probs = sigmoid(feats @ p["dense2_w"] + p["dense2_b"])
    return ForwardCache(x, pooled, pool_idx, mask, flat, h_pre, feats, probs)


def forward(model: CnnModel, w, training: bool = False, seed: int | None = None):
    """Features (dense1 activations) and per-class sigmoid probabilities."""
    c = forward_batch(model, w, training, seed)
    if _is_single(w):
        return c.features[0], c.probs[0]
    return c.features, c.probs


def loss(probs, label) -> float:
    """Binary cross-entropy averaged over classes (and over the batch)."""
    p = np.clip(np.asarray(probs, dtype=float), BCE_EPS, 1 - BCE_EPS)
    y = np.asarray(label, dtype=float)
    return float(np.mean(-(y * np.log(p) + (1 - y) * np.log(1 - p))))


def backward(model: CnnModel, cache: ForwardCache, y) -> dict[str, np.ndarray]:
    """Gradients of the mean batch loss w.r.t. every parameter."""
    p = model.params
    y = np.asarray(y, dtype=cache.probs.dtype).reshape(cache.probs.shape)
    n = y.shape[0]
    dz2 = (cache.probs - y) / (n * model.n_classes)
    g = {"dense2_w": cache.features.T @ dz2, "dense2_b": dz2.sum(axis=0)}
    dh = (dz2 @ p["dense2_w"].T) * (cache.h_pre > 0)
    g["dense1_w"] = cache.flat.T @ dh
    g["dense1_b"] = dh.sum(axis=0)
    dpool = (dh @ p["dense1_w"].T).reshape(cache.pooled.shape)
    if cache.mask is not None:
        dpool *= cache.mask
    # gradient reaches the winning conv output only where it was positive
    dpool *= cache.pooled > 0
    g["conv_b"] = dpool.sum(axis=(0, 2))
    x = cache.x
    gw = np.stack([np.einsum("nfl,nl->f", dpool, _phase_view(x, k, model)) for k in range(model.kernel)])
    for j in range(1, model.pool):
        dj = dpool * (cache.pool_idx == j)
        for k in range(model.kernel):
            shift = _phase_view(x, j + k, model) - _phase_view(x, k, model)
            gw[k] += np.einsum("nfl,nl->f", dj, shift)
    g["conv_w"] = gw
    return g


@dataclass
class Adam:
    learning_rate: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, model: CnnModel, grads: dict[str, np.ndarray]) -> CnnModel:
        self.t += 1
        return adam_step(model, grads, self.t, self)


def adam_step(model: CnnModel, grads: dict[str, np.ndarray], t: int, state: Adam) -> CnnModel:
    """In-place Adam update of ``model`` (also returned); moments live in ``state``."""
    if t < 1:
        raise ValidationError("Adam step counter starts at 1")
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        model.params[name] -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    return model


@dataclass
class TrainConfig:
    learning_rate: float = 1e-7
    batch_size: int = 64
    epochs: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    dropout_rate: float = 0.2
    split: tuple[float, float, float] = (0.75, 0.20, 0.05)  # train / test / validation
    seed: int = 0
    dtype: str = "float32"
    # inputs are rescaled so the training split has this RMS (None keeps raw volts)
    input_rms: float | None = 0.1

    def __post_init__(self):
        self.split = tuple(float(s) for s in self.split)
        if abs(sum(self.split) - 1.0) > 1e-9 or min(self.split) < 0:
            raise ValidationError("train/test/validation fractions must be nonnegative and sum to 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValidationError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    test_loss: list[float] = field(default_factory=list)
    test_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def __len__(self):
        return len(self.train_loss)


def accuracy(probs, labels) -> float:
    probs, labels = np.atleast_2d(probs), np.atleast_2d(labels)
    if probs.shape[0] == 0:
        return float("nan")
    return float(np.mean(probs.argmax(axis=1) == labels.argmax(axis=1)))


def stratified_split(labels: np.ndarray, fractions: Sequence[float], rng: np.random.Generator):
    """Per-class shuffled split into len(fractions) index arrays."""
    cls = labels.argmax(axis=1)
    parts = [[] for _ in fractions]
    cum = np.cumsum(fractions)
    for c in np.unique(cls):
        idx = rng.permutation(np.flatnonzero(cls == c))
        cuts = np.round(cum * idx.size).astype(int)
        start = 0
        for i, stop in enumerate(cuts):
            parts[i].extend(idx[start:stop])
            start = stop
    return [np.sort(np.array(p, dtype=int)) for p in parts]


def _stack(records) -> tuple[np.ndarray, np.ndarray]:
    X = np.stack([w.samples for w in records])
    Y = np.array([w.class_label for w in records], dtype=float)
    return X, Y


def evaluate(model: CnnModel, X: np.ndarray, Y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    if X.shape[0] == 0:
        return float("nan"), float("nan")
    probs = np.concatenate([forward_batch(model, X[i:i + batch]).probs for i in range(0, X.shape[0], batch)])
    return loss(probs, Y), accuracy(probs, Y)


def train(records: Sequence[Waveform], cfg: TrainConfig, *, n_classes: int | None = None,
          model: CnnModel | None = None) -> tuple[CnnModel, History]:
    """Fit one network on the records of a single path.

    Training loss/accuracy are running averages over the epoch's minibatches
    (as Keras reports them).  Returns the snapshot with the lowest validation
    loss, or the last epoch when the validation split is empty.
    """
    X, Y = _stack(records)
    n_classes = n_classes or Y.shape[1]
    rng = np.random.default_rng(cfg.seed)
    init_seed = int(rng.integers(2**63))
    fresh = model is None
    if fresh:
        model = CnnModel.initialize(X.shape[1], n_classes, seed=init_seed,
                                    dropout_rate=cfg.dropout_rate, dtype=np.dtype(cfg.dtype))
    X = X.astype(model.dtype)
    tr, te, va = stratified_split(Y, cfg.split, rng)
    if fresh and cfg.input_rms is not None and tr.size:
        rms = float(np.sqrt(np.mean(np.square(X[tr], dtype=np.float64))))
        if rms > 0:
            model.input_scale = cfg.input_rms / rms
    present = set(Y[tr].argmax(axis=1)) if tr.size else set()
    missing = set(range(n_classes)) - present
    if missing:
        raise EmptyClass(f"classes {sorted(missing)} absent from the training split")
    hist = History()
    if cfg.epochs == 0:
        return model, hist
    opt = Adam(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    best, best_score = None, math.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(tr)
        tot_loss = tot_hit = 0.0
        for start in range(0, order.size, cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            cache = forward_batch(model, X[b], training=True, rng=rng)
            tot_loss += loss(cache.probs, Y[b]) * b.size
            tot_hit += accuracy(cache.probs, Y[b]) * b.size
            opt.step(model, backward(model, cache, Y[b]))
        hist.train_loss.append(tot_loss / order.size)
        hist.train_accuracy.append(tot_hit / order.size)
        for split, losses, accs in ((te, hist.test_loss, hist.test_accuracy),
                                    (va, hist.val_loss, hist.val_accuracy)):
            l, a = evaluate(model, X[split], Y[split])
            losses.append(l)
            accs.append(a)
        score = hist.val_loss[-1] if va.size else -epoch
        if score < best_score:
            best_score, best = score, model.copy()
            hist.best_epoch = epoch
        log.debug("epoch %d train %.4f/%.3f test %.4f/%.3f", epoch, hist.train_loss[-1],
                  hist.train_accuracy[-1], hist.test_loss[-1], hist.test_accuracy[-1])
    return best, hist


def extract_features(model: CnnModel, w, batch: int = 256) -> np.ndarray:
    """Dense1 activations in inference mode; shape (16,) or (n, 16)."""
    if _is_single(w):
        return forward_batch(model, w).features[0]
    X = _as_batch(model, w)
    return np.concatenate([forward_batch(model, X[i:i + batch]).features for i in range(0, X.shape[0], batch)])
