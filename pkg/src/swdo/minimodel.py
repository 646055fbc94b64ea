"""A small numpy classifier: conv -> ReLU -> Haar sub-bands -> attention -> dense -> sigmoid.

Gradients are derived by hand. The wavelet layer is orthonormal, so its
backward pass is the inverse transform.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .wavelet import as_float, subband_concat, subband_concat_adjoint

PROB_EPS = 1e-7
LR_DECAY = 0.95

# (lower, upper) for each tuned hyperparameter.
PUBLISHED_BOUNDS: dict[str, tuple[float, float]] = {
    "filters_size": (64, 256),
    "kernel_size": (3, 9),
    "lr": (1e-5, 1e-2),
    "l2_reg": (1e-5, 1e-2),
    "l1_reg": (1e-5, 1e-2),
    "batch_size": (16, 128),
    "epochs": (10, 100),
    "att_reg_weight": (1e-5, 1e-3),
}

INTEGER_FIELDS = ("filters_size", "kernel_size", "batch_size", "epochs")
LOG_FIELDS = ("lr", "l2_reg", "l1_reg", "att_reg_weight")


class NonFiniteActivation(FloatingPointError):
    def __init__(self, layer: str):
        super().__init__(f"non-finite values after layer {layer!r}")
        self.layer = layer


def next_odd(k: int) -> int:
    k = int(k)
    return k if k % 2 else k + 1


@dataclass(frozen=True)
class ModelConfig:
    filters_size: int = 128
    kernel_size: int = 5
    lr: float = 3e-4
    l2_reg: float = 3e-4
    l1_reg: float = 3e-4
    batch_size: int = 64
    epochs: int = 50
    att_reg_weight: float = 3e-5

    def __post_init__(self):
        for name in INTEGER_FIELDS:
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "kernel_size", next_odd(self.kernel_size))
        for name in LOG_FIELDS:
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.filters_size < 1 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("filters_size, batch_size and epochs must be positive")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if min(self.l2_reg, self.l1_reg, self.att_reg_weight) < 0:
            raise ValueError("regularization weights must be non-negative")

    def check_bounds(self, bounds: dict[str, tuple[float, float]] = PUBLISHED_BOUNDS) -> None:
        for name, (lo, hi) in bounds.items():
            v = getattr(self, name)
            if not lo <= v <= hi:
                raise ValueError(f"{name}={v} outside [{lo}, {hi}]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    images: np.ndarray  # (n, C, H, W) in [0, 1]
    labels: np.ndarray  # (n,) in {0, 1}

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got {self.images.shape}")
        if len(self.labels) != len(self.images):
            raise ValueError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx, dtype=int)
        return Batch(self.images[idx], self.labels[idx])


WEIGHT_ORDER = ("conv_w", "conv_b", "wq", "wk", "wv", "dense_w", "dense_b")
# Groups penalized by the L1/L2 terms; attention projections have their own penalty.
PENALIZED = ("conv_w", "dense_w")
ATTENTION = ("wq", "wk", "wv")


def feature_geometry(height: int, width: int, kernel: int) -> tuple[int, int]:
    """Spatial size of the conv output after the crop to even dimensions."""
    ho, wo = height - kernel + 1, width - kernel + 1
    if ho < 2 or wo < 2:
        raise ValueError(f"kernel {kernel} too large for a {height}x{width} input")
    return ho - ho % 2, wo - wo % 2


def init_weights(config: ModelConfig, channels: int, height: int, width: int,
                 seed: int, att_dim: int = 8) -> dict[str, np.ndarray]:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    k, f = config.kernel_size, config.filters_size
    he, we = feature_geometry(height, width, k)
    n_tokens = (he // 2) * (we // 2)

    def glorot(shape, fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, shape)

    return {
        "conv_w": glorot((f, channels, k, k), channels * k * k, f * k * k),
        "conv_b": np.zeros(f),
        "wq": glorot((4 * f, att_dim), 4 * f, att_dim),
        "wk": glorot((4 * f, att_dim), 4 * f, att_dim),
        "wv": glorot((4 * f, att_dim), 4 * f, att_dim),
        "dense_w": glorot((n_tokens * att_dim,), n_tokens * att_dim, 1),
        "dense_b": np.zeros(()),
    }


def zeros_like_weights(weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in weights.items()}


def conv2d_valid(x, kernels, biases) -> np.ndarray:
    """Valid cross-correlation. ``x`` is ``(C, H, W)`` or ``(n, C, H, W)``;
    ``kernels`` is ``(F, C, k, k)``. No cropping happens here."""
    x = as_float(x)
    kernels = np.asarray(kernels, dtype=x.dtype)
    single = x.ndim == 3
    if single:
        x = x[None]
    k = kernels.shape[-1]
    if k > x.shape[-1] or kernels.shape[-2] > x.shape[-2]:
        raise ValueError(f"kernel {kernels.shape[-2:]} larger than input {x.shape[-2:]}")
    patches = sliding_window_view(x, kernels.shape[-2:], axis=(2, 3))  # n, C, Ho, Wo, k, k
    out = np.tensordot(patches, kernels, axes=([1, 4, 5], [1, 2, 3]))  # n, Ho, Wo, F
    out = np.moveaxis(out, -1, 1) + np.asarray(biases, dtype=x.dtype)[None, :, None, None]
    return out[0] if single else out


def crop_even(z: np.ndarray) -> np.ndarray:
    h, w = z.shape[-2:]
    return z[..., : h - h % 2, : w - w % 2]


def softmax(scores: np.ndarray) -> np.ndarray:
    e = scores - scores.max(axis=-1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=-1, keepdims=True)
    return e


def attention_forward(tokens, weights, return_matrix: bool = False):
    """Single-head scaled dot-product self-attention over ``(..., n_t, d_in)`` tokens."""
    tokens = as_float(tokens)
    q = tokens @ weights["wq"]
    k = tokens @ weights["wk"]
    v = tokens @ weights["wv"]
    scale = 1.0 / math.sqrt(q.shape[-1])
    attn = softmax(q @ np.swapaxes(k, -1, -2) * scale)
    out = attn @ v
    return (out, attn) if return_matrix else out


def _check_finite(values: np.ndarray, layer: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteActivation(layer)


def _forward_cache(weights: dict[str, np.ndarray], images: np.ndarray) -> dict:
    c = {}
    c["patches"] = sliding_window_view(images, weights["conv_w"].shape[-2:], axis=(2, 3))
    z = conv2d_valid(images, weights["conv_w"], weights["conv_b"])
    c["z_shape"] = z.shape
    z = crop_even(z)
    _check_finite(z, "conv")
    c["relu_mask"] = z > 0
    a = np.where(c["relu_mask"], z, 0.0)
    s = subband_concat(a)  # n, 4F, h, w
    c["s_shape"] = s.shape
    n = s.shape[0]
    tokens = s.reshape(n, s.shape[1], -1).transpose(0, 2, 1)  # n, nt, 4F
    c["tokens"] = tokens
    q = tokens @ weights["wq"]
    k = tokens @ weights["wk"]
    v = tokens @ weights["wv"]
    c["scale"] = 1.0 / math.sqrt(q.shape[-1])
    attn = softmax(q @ np.swapaxes(k, -1, -2) * c["scale"])
    out = attn @ v
    _check_finite(out, "attention")
    c.update(q=q, k=k, v=v, attn=attn)
    c["flat"] = out.reshape(n, -1)
    logits = c["flat"] @ weights["dense_w"] + weights["dense_b"]
    _check_finite(logits, "dense")
    # overflow-free logistic
    c["raw_prob"] = np.exp(-np.logaddexp(0.0, -logits.astype(float)))
    c["prob"] = np.clip(c["raw_prob"], PROB_EPS, 1.0 - PROB_EPS)
    return c


def forward(config: ModelConfig | None, weights: dict[str, np.ndarray], batch: Batch | np.ndarray) -> np.ndarray:
    """Melanoma probabilities, clipped to ``[1e-7, 1 - 1e-7]``."""
    images = batch.images if isinstance(batch, Batch) else np.asarray(batch, dtype=float)
    return _forward_cache(weights, images)["prob"]


def regularization(config: ModelConfig, weights: dict[str, np.ndarray]) -> float:
    total = 0.0
    for name in PENALIZED:
        w = weights[name]
        total += config.l2_reg * float(np.sum(w * w)) + config.l1_reg * float(np.sum(np.abs(w)))
    for name in ATTENTION:
        total += config.att_reg_weight * float(np.sum(weights[name] ** 2))
    return total


def bce_loss(probs, labels, config: ModelConfig, weights: dict[str, np.ndarray]) -> float:
    p = np.clip(np.asarray(probs, dtype=float), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=float)
    if p.shape != y.shape:
        raise ValueError("probs and labels differ in shape")
    data = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(data) + regularization(config, weights)


def loss(config: ModelConfig, weights: dict[str, np.ndarray], batch: Batch) -> float:
    return bce_loss(forward(config, weights, batch), batch.labels, config, weights)


def regularization_grad(config: ModelConfig, weights: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    g = zeros_like_weights(weights)
    for name in PENALIZED:
        w = weights[name]
        g[name] = 2.0 * config.l2_reg * w + config.l1_reg * np.sign(w)
    for name in ATTENTION:
        g[name] = 2.0 * config.att_reg_weight * weights[name]
    return g


def backward(config: ModelConfig, weights: dict[str, np.ndarray], batch: Batch) -> dict[str, np.ndarray]:
    """Gradient of :func:`loss` with respect to every weight array."""
    return _gradients(config, weights, batch.images, batch.labels)[0]


def _gradients(config, weights, images, y):
    c = _forward_cache(weights, images)
    n = len(y)
    # clipped probabilities are flat in the logit
    unclipped = (c["raw_prob"] > PROB_EPS) & (c["raw_prob"] < 1.0 - PROB_EPS)
    d_logit = np.where(unclipped, (c["raw_prob"] - y) / n, 0.0).astype(c["flat"].dtype)

    g = regularization_grad(config, weights)
    g["dense_w"] += c["flat"].T @ d_logit
    g["dense_b"] += np.sum(d_logit)

    d_out = (d_logit[:, None] * weights["dense_w"][None, :]).reshape(c["v"].shape)
    attn, q, k, v, tokens = c["attn"], c["q"], c["k"], c["v"], c["tokens"]
    d_attn = d_out @ np.swapaxes(v, -1, -2)
    d_v = np.swapaxes(attn, -1, -2) @ d_out
    # softmax backward, in place on d_attn
    row_dot = np.einsum("nij,nij->ni", d_attn, attn)[..., None]
    d_attn -= row_dot
    d_attn *= attn
    d_attn *= c["scale"]
    d_scores = d_attn
    d_q = d_scores @ k
    d_k = np.swapaxes(d_scores, -1, -2) @ q
    flat_tokens = tokens.reshape(-1, tokens.shape[-1]).T
    g["wq"] += flat_tokens @ d_q.reshape(-1, d_q.shape[-1])
    g["wk"] += flat_tokens @ d_k.reshape(-1, d_k.shape[-1])
    g["wv"] += flat_tokens @ d_v.reshape(-1, d_v.shape[-1])
    d_tokens = d_q @ weights["wq"].T + d_k @ weights["wk"].T + d_v @ weights["wv"].T

    d_s = np.swapaxes(d_tokens, -1, -2).reshape(c["s_shape"])
    d_a = subband_concat_adjoint(d_s)
    d_zc = np.where(c["relu_mask"], d_a, 0.0)
    d_z = np.zeros(c["z_shape"], dtype=d_zc.dtype)
    d_z[..., : d_zc.shape[-2], : d_zc.shape[-1]] = d_zc
    # patches: n, C, Ho, Wo, k, k ; d_z: n, F, Ho, Wo
    g["conv_w"] += np.tensordot(d_z, c["patches"], axes=([0, 2, 3], [0, 2, 3]))
    g["conv_b"] += d_z.sum(axis=(0, 2, 3))
    return g, c["prob"]


def lr_schedule(epoch: int, base_lr: float) -> float:
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    return base_lr * LR_DECAY ** epoch


def accuracy_of(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    return float(np.mean((probs >= threshold) == (labels >= 0.5)))


@dataclass
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    weights: dict[str, np.ndarray]
    history: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def best_val_accuracy(self) -> float:
        return self.history[self.best_epoch].val_accuracy


def train(config: ModelConfig, train_set: Batch, val_set: Batch, seed: int,
          att_dim: int = 8, dtype=np.float32) -> TrainResult:
    """Mini-batch gradient descent; keeps the weights of the best validation epoch.

    Training metrics are accumulated over the epoch's mini-batches (before each
    update); validation metrics come from a full pass after the epoch.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise ValueError("training and validation sets must be nonempty")
    _, channels, height, width = train_set.images.shape
    seq = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)
    init_seed, shuffle_seed = seq.generate_state(2)
    weights = init_weights(config, channels, height, width, int(init_seed), att_dim)
    weights = {k: v.astype(dtype) for k, v in weights.items()}
    shuffle = np.random.default_rng(int(shuffle_seed))
    x_train = train_set.images.astype(dtype)
    y_train = train_set.labels
    x_val = val_set.images.astype(dtype)

    result = TrainResult(weights={k: v.copy() for k, v in weights.items()})
    best_acc = -1.0
    for epoch in range(config.epochs):
        lr = lr_schedule(epoch, config.lr)
        order = shuffle.permutation(len(train_set))
        probs = np.empty(len(order))
        for start in range(0, len(order), config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, p = _gradients(config, weights, x_train[idx], y_train[idx])
            probs[start:start + len(idx)] = p
            for name in WEIGHT_ORDER:
                weights[name] = (weights[name] - lr * grads[name]).astype(dtype)
                _check_finite(weights[name], name)
        y_seen = y_train[order]
        p_val = _forward_cache(weights, x_val)["prob"]
        rec = EpochRecord(
            epoch=epoch,
            lr=lr,
            train_loss=bce_loss(probs, y_seen, config, weights),
            train_accuracy=accuracy_of(probs, y_seen),
            val_loss=bce_loss(p_val, val_set.labels, config, weights),
            val_accuracy=accuracy_of(p_val, val_set.labels),
        )
        result.history.append(rec)
        if rec.val_accuracy > best_acc:
            best_acc = rec.val_accuracy
            result.best_epoch = epoch
            result.weights = {k: v.copy() for k, v in weights.items()}
    result.weights = {k: v.astype(float) for k, v in result.weights.items()}
    return result


# --- weight snapshots -----------------------------------------------------

_MAGIC = b"SWDOW001"


def save_weights(path, weights: dict[str, np.ndarray], config: ModelConfig, seed: int) -> None:
    """Header length (u64 LE), JSON header, then every array as little-endian float64."""
    header = {
        "config": config.to_dict(),
        "seed": int(seed),
        "arrays": [{"name": k, "shape": list(weights[k].shape)} for k in WEIGHT_ORDER],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    flat = np.concatenate([np.ravel(weights[k]) for k in WEIGHT_ORDER]).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(flat.tobytes())


def load_weights(path) -> tuple[dict[str, np.ndarray], ModelConfig, int]:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a weight snapshot")
    (size,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + size].decode("utf-8"))
    flat = np.frombuffer(data[16 + size:], dtype="<f8")
    weights, offset = {}, 0
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        weights[spec["name"]] = flat[offset:offset + count].reshape(shape).astype(float)
        offset += count
    if offset != flat.size:
        raise ValueError(f"{path}: payload size does not match header")
    return weights, ModelConfig(**header["config"]), int(header["seed"])


def with_overrides(config: ModelConfig, **kw) -> ModelConfig:
    return replace(config, **kw)
