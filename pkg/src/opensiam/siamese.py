"""Shared-weight Siamese MLP, contrastive loss, and minibatch gradient descent.

Both branches run the same :class:`SiameseNet`; there is only one copy of the
parameters, so sharing is structural. The embedding of ``x`` is

    G(x) = act_L(W_L ... act_1(W_1 x + b_1) ... + b_L)

and the pair distance is ``D = ||G(x1) - G(x2)||``. Pairs are scored with the
contrastive loss

    L = ((1 - y) D^2 + y max(0, m - D)^2) / 2

where ``y = 0`` for same-identity pairs and ``y = 1`` otherwise.

Everything is float64.
"""

from __future__ import annotations

import logging
import os
import struct
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from opensiam.pairing import PairSet
from opensiam.rng import make_rng

log = logging.getLogger(__name__)

DEFAULT_LAYER_DIMS = (2622, 2048, 2048, 2048)

ACTIVATIONS = ("relu", "identity")


class TrainingError(RuntimeError):
    pass


class ModelFileError(ValueError):
    pass


class CorruptModelError(ModelFileError):
    pass


class ModelVersionError(ModelFileError):
    """Unsupported format version, or a header inconsistent with the payload."""


def _act(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        return np.maximum(z, 0.0)
    return z


def _act_grad(tag: str, z: np.ndarray) -> np.ndarray:
    if tag == "relu":
        # derivative taken as 0 at z == 0
        return (z > 0).astype(np.float64)
    return np.ones_like(z)


def default_activations(n_layers: int) -> tuple[str, ...]:
    return ("relu",) * (n_layers - 1) + ("identity",)


@dataclass(eq=False)
class SiameseNet:
    """Fully connected layers ``layer_dims[0] -> ... -> layer_dims[-1]``.

    ``weights[l]`` has shape ``(layer_dims[l+1], layer_dims[l])``.
    """

    layer_dims: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...] = field(default=())

    def __post_init__(self):
        self.layer_dims = tuple(int(d) for d in self.layer_dims)
        n = len(self.layer_dims) - 1
        if n < 1 or any(d < 1 for d in self.layer_dims):
            raise ValueError(f"invalid layer_dims {self.layer_dims}")
        if not self.activations:
            self.activations = default_activations(n)
        self.activations = tuple(self.activations)
        if len(self.weights) != n or len(self.biases) != n or len(self.activations) != n:
            raise ValueError("weights, biases and activations must have one entry per layer")
        for tag in self.activations:
            if tag not in ACTIVATIONS:
                raise ValueError(f"unknown activation {tag!r}")
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            shape = (self.layer_dims[l + 1], self.layer_dims[l])
            if w.shape != shape or b.shape != (shape[0],):
                raise ValueError(f"layer {l}: got W{w.shape}, b{b.shape}, expected W{shape}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    @property
    def output_dim(self) -> int:
        return self.layer_dims[-1]

    def parameters(self) -> list[np.ndarray]:
        """Parameter arrays in file order: W_1, b_1, W_2, b_2, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> SiameseNet:
        return SiameseNet(
            self.layer_dims,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activations,
        )

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.parameters())

    def same_as(self, other: SiameseNet) -> bool:
        return (
            self.layer_dims == other.layer_dims
            and self.activations == other.activations
            and all(np.array_equal(p, q) for p, q in zip(self.parameters(), other.parameters()))
        )


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def __add__(self, other: Gradients) -> Gradients:
        return Gradients(
            [a + b for a, b in zip(self.weights, other.weights)],
            [a + b for a, b in zip(self.biases, other.biases)],
        )


def init_net(layer_dims: Sequence[int] = DEFAULT_LAYER_DIMS, rng_seed: int = 0,
             activations: Sequence[str] | None = None) -> SiameseNet:
    """Glorot-uniform weights, zero biases.

    ``W_l ~ U(-a, a)`` with ``a = sqrt(6 / (fan_in + fan_out))``, drawn layer
    by layer in row-major order from one PCG64 stream.
    """
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"invalid layer_dims {dims}")
    rng = make_rng(rng_seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return SiameseNet(dims, weights, biases, tuple(activations) if activations else ())


def _check_input(net: SiameseNet, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] != net.input_dim:
        raise ValueError(f"input has shape {x.shape}, network expects length {net.input_dim}")
    return x


def forward(net: SiameseNet, x) -> np.ndarray:
    """Embed one vector (1-d) or a batch of row vectors (2-d)."""
    x = _check_input(net, x)
    if x.ndim == 1:
        a = x
        for w, b, tag in zip(net.weights, net.biases, net.activations):
            a = _act(tag, w @ a + b)
        return a
    a = x
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        a = _act(tag, a @ w.T + b)
    return a


def euclidean(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Euclidean distance along the last axis (broadcasts)."""
    diff = u - v
    return np.sqrt(np.sum(diff * diff, axis=-1))


def distance(net: SiameseNet, x1, x2) -> float:
    return float(euclidean(forward(net, x1), forward(net, x2)))


def contrastive_loss(d: float, y: int, m: float = 1.0) -> float:
    if d < 0:
        raise ValueError(f"distance must be nonnegative, got {d}")
    if m <= 0:
        raise ValueError(f"margin must be positive, got {m}")
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    hinge = max(0.0, m - d)
    return ((1 - y) * d * d + y * hinge * hinge) / 2


def _forward_cached(net: SiameseNet, X: np.ndarray):
    pre, post = [], [X]
    a = X
    for w, b, tag in zip(net.weights, net.biases, net.activations):
        z = a @ w.T + b
        a = _act(tag, z)
        pre.append(z)
        post.append(a)
    return pre, post


def _backprop(net: SiameseNet, pre, post, upstream: np.ndarray) -> Gradients:
    """Parameter gradients of ``sum(upstream * G(X))``, summed over rows."""
    gw = [None] * net.n_layers
    gb = [None] * net.n_layers
    da = upstream
    for l in reversed(range(net.n_layers)):
        dz = da * _act_grad(net.activations[l], pre[l])
        gw[l] = dz.T @ post[l]
        gb[l] = dz.sum(axis=0)
        if l:
            da = dz @ net.weights[l]
    return Gradients(gw, gb)


def vjp(net: SiameseNet, x, upstream) -> Gradients:
    """Gradient of ``<upstream, G(x)>`` with respect to every parameter."""
    x = _check_input(net, x)
    X = np.atleast_2d(x)
    pre, post = _forward_cached(net, X)
    return _backprop(net, pre, post, np.atleast_2d(np.asarray(upstream, dtype=np.float64)))


def embedding_grads(e1: np.ndarray, e2: np.ndarray, y, m: float):
    """Per-pair loss and ``dL/dG(x1)`` for row-stacked embeddings.

    ``dL/dG(x2)`` is the negation. At ``D = 0`` the derivative of ``D`` is
    taken as zero, which only matters for the hinge term.
    """
    diff = e1 - e2
    d = np.sqrt(np.sum(diff * diff, axis=-1))
    y = np.asarray(y, dtype=np.float64)
    hinge = np.maximum(0.0, m - d)
    loss = ((1 - y) * d * d + y * hinge * hinge) / 2
    safe_d = np.where(d > 0, d, 1.0)
    coef = (1 - y) - np.where(d > 0, y * hinge / safe_d, 0.0)
    return loss, coef[..., None] * diff


def backward(net: SiameseNet, x1, x2, y: int, m: float = 1.0) -> tuple[float, Gradients]:
    """Contrastive loss of one pair and its exact parameter gradients.

    Each shared parameter's gradient is the sum of the two branches'
    contributions.
    """
    if m <= 0:
        raise ValueError(f"margin must be positive, got {m}")
    x1 = _check_input(net, x1)
    x2 = _check_input(net, x2)
    if x1.ndim != 1 or x2.ndim != 1:
        raise ValueError("backward takes single vectors; use batch_loss_and_grads for batches")
    _, grads = batch_loss_and_grads(net, x1[None], x2[None], np.array([y]), m, reduce="sum")
    # report the loss through the single-vector path so it matches distance() bitwise
    return contrastive_loss(distance(net, x1, x2), y, m), grads


def batch_loss_and_grads(net: SiameseNet, X1: np.ndarray, X2: np.ndarray, Y: np.ndarray,
                         m: float, reduce: str = "mean") -> tuple[np.ndarray, Gradients]:
    """Per-pair losses and the summed or averaged gradient over a batch.

    Both branches go through one stacked forward pass, so the backward pass
    adds their contributions into the same parameter gradients.
    """
    B = len(X1)
    pre, post = _forward_cached(net, np.vstack([X1, X2]))
    emb = post[-1]
    loss, g1 = embedding_grads(emb[:B], emb[B:], Y, m)
    if reduce == "mean":
        g1 = g1 / B
    elif reduce != "sum":
        raise ValueError(f"reduce must be 'mean' or 'sum', got {reduce!r}")
    return loss, _backprop(net, pre, post, np.vstack([g1, -g1]))


@dataclass(frozen=True)
class TrainConfig:
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 50
    batch_size: int = 32
    rng_seed: int = 0
    optimizer: str = "sgd"

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError(f"margin must be > 0, got {self.margin}")
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.optimizer != "sgd":
            raise ValueError(f"unsupported optimizer {self.optimizer!r}; only 'sgd' is available")


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.epoch_loss)


def train(net: SiameseNet, pairs: PairSet, store, cfg: TrainConfig) -> tuple[SiameseNet, TrainHistory]:
    """Plain minibatch gradient descent on the mean contrastive loss.

    Works on a copy of ``net``. Each epoch shuffles the pairs with a PCG64
    stream seeded by ``cfg.rng_seed``, walks them in batches of
    ``cfg.batch_size`` (the last one may be short) and steps
    ``W -= lr * mean batch gradient``. The recorded epoch loss is the mean of
    the per-pair losses seen during that epoch.
    """
    n = len(pairs)
    if n == 0:
        raise TrainingError("cannot train on an empty pair set")
    X = store.vectors
    if X.shape[1] != net.input_dim:
        raise TrainingError(f"features have dim {X.shape[1]}, network expects {net.input_dim}")
    hi = max(int(pairs.a.max()), int(pairs.b.max()))
    lo = min(int(pairs.a.min()), int(pairs.b.min()))
    if lo < 0 or hi >= len(X):
        raise TrainingError(f"pair index out of range [0, {len(X)})")

    net = net.copy()
    rng = make_rng(cfg.rng_seed)
    history = TrainHistory()
    params = net.parameters()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = batch_loss_and_grads(
                    net, X[pairs.a[idx]], X[pairs.b[idx]], pairs.label[idx], cfg.margin
                )
            batch_total = float(loss.sum())
            if not np.isfinite(batch_total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch starting at {start}; "
                    f"try a smaller learning rate (lr={cfg.learning_rate})"
                )
            total += batch_total
            for p, g in zip(params, grads.parameters()):
                p -= cfg.learning_rate * g
        history.epoch_loss.append(total / n)
        log.debug("epoch %d mean loss %.6g", epoch, total / n)
    return net, history


# Model file layout (all little-endian):
#   8s   magic b"OSIAMNET"
#   u32  format version
#   u32  L (number of layers)
#   u32  layer_dims[L + 1]
#   L x (u8 length + ascii activation tag)
#   u64  parameter count
#   u32  CRC-32 of the parameter bytes
#   f64  parameters W_1 (row-major), b_1, ..., W_L, b_L
MAGIC = b"OSIAMNET"
FORMAT_VERSION = 1


def save_net(net: SiameseNet, path: str | os.PathLike) -> None:
    payload = b"".join(np.ascontiguousarray(p, dtype="<f8").tobytes() for p in net.parameters())
    n_params = sum(p.size for p in net.parameters())
    head = [MAGIC, struct.pack("<II", FORMAT_VERSION, net.n_layers)]
    head.append(struct.pack(f"<{len(net.layer_dims)}I", *net.layer_dims))
    for tag in net.activations:
        raw = tag.encode("ascii")
        head.append(struct.pack("<B", len(raw)) + raw)
    head.append(struct.pack("<QI", n_params, zlib.crc32(payload)))
    with open(path, "wb") as fh:
        fh.write(b"".join(head) + payload)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CorruptModelError("model file is truncated")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_net(path: str | os.PathLike) -> SiameseNet:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CorruptModelError(f"{path}: not a model file (bad magic)")
    version, n_layers = r.unpack("<II")
    if version != FORMAT_VERSION:
        raise ModelVersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if not 1 <= n_layers <= 1024:
        raise CorruptModelError(f"{path}: implausible layer count {n_layers}")
    dims = r.unpack(f"<{n_layers + 1}I")
    tags = []
    for _ in range(n_layers):
        (length,) = r.unpack("<B")
        tags.append(r.take(length).decode("ascii", errors="replace"))
    n_params, crc = r.unpack("<QI")
    expected = sum(o * i + o for i, o in zip(dims[:-1], dims[1:]))
    if n_params != expected:
        raise ModelVersionError(
            f"{path}: header dims {list(dims)} imply {expected} parameters, file declares {n_params}"
        )
    payload = r.take(8 * n_params)
    if r.pos != len(r.buf):
        raise CorruptModelError(f"{path}: {len(r.buf) - r.pos} trailing bytes")
    if zlib.crc32(payload) != crc:
        raise CorruptModelError(f"{path}: parameter checksum mismatch")
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    weights, biases, off = [], [], 0
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(flat[off:off + fan_in * fan_out].reshape(fan_out, fan_in).copy())
        off += fan_in * fan_out
        biases.append(flat[off:off + fan_out].copy())
        off += fan_out
    try:
        return SiameseNet(dims, weights, biases, tuple(tags))
    except ValueError as exc:
        raise ModelVersionError(f"{path}: {exc}") from None
