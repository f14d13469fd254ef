"""Reverse-mode autodiff over float64 numpy arrays, plus the small model zoo
built on it: MLPs, the permutation-invariant point-cloud encoder, sinusoidal
step encoding, Adam, and the binary checkpoint container.

Everything is float64: desk-scale problem sizes make speed a non-issue and
the finite-difference gradient checks need the headroom.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .errors import InvalidInput, OptimizerError, ShapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)

# forward-pass multiply-add counter for cost-scaling assertions
FLOP_COUNTER = {"matmul": 0}


class Tensor:
    """Node in the computation graph. Wraps a float64 array; accumulates its
    gradient during backward when requires_grad is set."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self):
        self.grad = None

    def backward(self, seed_grad=None):
        """Reverse-accumulate gradients from this node through the graph."""
        if seed_grad is None:
            seed_grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.asarray(seed_grad, dtype=np.float64)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray):
    if not t.requires_grad:
        return
    # un-broadcast: sum gradient down to the parent's shape
    while g.ndim > t.data.ndim:
        g = g.sum(axis=0)
    for ax, n in enumerate(t.data.shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} @ {b.data.shape}")
    FLOP_COUNTER["matmul"] += a.data.shape[0] * a.data.shape[1] * b.data.shape[1]
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError as e:
        raise ShapeError(f"add: {e}") from None

    def backward(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError as e:
        raise ShapeError(f"mul: {e}") from None

    def backward(g):
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(out_data, (a, b), backward)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0.0
    out_data = np.where(mask, x.data, 0.0)

    def backward(g):
        _accumulate(x, g * mask)

    return _make(out_data, (x,), backward)


def gelu(x) -> Tensor:
    """Exact erf-based GELU; the backward uses the analytic derivative."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out_data = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        _accumulate(x, g * (cdf + x.data * pdf))

    return _make(out_data, (x,), backward)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out_data = np.where(
        x.data >= 0, 1.0 / (1.0 + np.exp(-x.data)), np.exp(x.data) / (1.0 + np.exp(x.data))
    )

    def backward(g):
        _accumulate(x, g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward)


def mse(pred, target) -> Tensor:
    pred, target = _as_tensor(pred), _as_tensor(target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shape mismatch {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out_data = np.array(float(np.mean(diff * diff)))

    def backward(g):
        _accumulate(pred, g * 2.0 * diff / n)
        _accumulate(target, -g * 2.0 * diff / n)

    return _make(out_data, (pred, target), backward)


def bce(p, y) -> Tensor:
    """Mean binary cross entropy on probabilities; clips p away from {0, 1}
    so float64 log stays finite on saturated inputs."""
    p, y = _as_tensor(p), _as_tensor(y)
    if p.data.shape != y.data.shape:
        raise ShapeError(f"bce: shape mismatch {p.data.shape} vs {y.data.shape}")
    eps = 1e-12
    pc = np.clip(p.data, eps, 1.0 - eps)
    n = pc.size
    out_data = np.array(float(np.mean(-y.data * np.log(pc) - (1.0 - y.data) * np.log(1.0 - pc))))

    def backward(g):
        _accumulate(p, g * (pc - y.data) / (pc * (1.0 - pc)) / n)

    return _make(out_data, (p, y), backward)


def maxpool_over_points(x) -> Tensor:
    """(N, D) -> (1, D) max over the point axis. Gradient routes to the first
    argmax row per feature (ties resolved by lowest index)."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] < 1:
        raise ShapeError(f"maxpool_over_points expects non-empty (N, D), got {x.data.shape}")
    idx = np.argmax(x.data, axis=0)
    out_data = x.data[idx, np.arange(x.data.shape[1])][None, :]

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[idx, np.arange(x.data.shape[1])] = g[0]
        _accumulate(x, gx)

    return _make(out_data, (x,), backward)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat of zero tensors")
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis if axis >= 0 else g.ndim + axis] = slice(lo, hi)
            _accumulate(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


def broadcast_rows(x, n) -> Tensor:
    """(1, D) -> (n, D); backward sums over the replicated rows."""
    x = _as_tensor(x)
    if x.data.ndim != 2 or x.data.shape[0] != 1:
        raise ShapeError(f"broadcast_rows expects (1, D), got {x.data.shape}")
    out_data = np.repeat(x.data, n, axis=0)

    def backward(g):
        _accumulate(x, g.sum(axis=0, keepdims=True))

    return _make(out_data, (x,), backward)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpSpec:
    widths: tuple
    activation: str = "relu"
    output_activation: str = "none"

    def __post_init__(self):
        if len(self.widths) < 3:
            raise InvalidInput("MlpSpec needs at least one hidden layer")
        if any(w <= 0 for w in self.widths):
            raise InvalidInput("MlpSpec widths must be positive")
        if self.activation not in ("relu", "gelu"):
            raise InvalidInput(f"unknown activation {self.activation!r}")
        if self.output_activation not in ("none", "sigmoid"):
            raise InvalidInput(f"unknown output activation {self.output_activation!r}")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Mlp:
    """Fully connected stack over row-batched inputs (B, widths[0])."""

    def __init__(self, spec: MlpSpec, rng: np.random.Generator, name: str = "mlp"):
        self.spec = spec
        self.name = name
        self.weights = []
        self.biases = []
        for i, (fi, fo) in enumerate(zip(spec.widths[:-1], spec.widths[1:])):
            self.weights.append(
                Tensor(glorot_uniform(rng, fi, fo), requires_grad=True, name=f"{name}/w{i}")
            )
            self.biases.append(
                Tensor(np.zeros(fo), requires_grad=True, name=f"{name}/b{i}")
            )
        self._act = relu if spec.activation == "relu" else gelu

    def __call__(self, x: Tensor) -> Tensor:
        h = _as_tensor(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = self._act(h)
        if self.spec.output_activation == "sigmoid":
            h = sigmoid(h)
        return h

    def parameters(self) -> dict:
        out = {}
        for t in (*self.weights, *self.biases):
            out[t.name] = t
        return out


@dataclass
class EncoderWeights:
    """Shared per-point MLP, pooled, then a post-pool MLP to the embedding."""

    point_mlp: Mlp
    post_mlp: Mlp
    embedding_dim: int = field(default=128)

    def __post_init__(self):
        if self.embedding_dim < 16:
            raise InvalidInput("embedding_dim must be >= 16")

    def parameters(self) -> dict:
        return {**self.point_mlp.parameters(), **self.post_mlp.parameters()}


def make_encoder(rng: np.random.Generator, embedding_dim: int = 128) -> EncoderWeights:
    """3 -> 64 -> 128 per-point features, max pool, 128 -> embedding_dim."""
    point = Mlp(MlpSpec((3, 64, 128), activation="relu"), rng, name="encoder/point")
    post = Mlp(MlpSpec((128, 128, embedding_dim), activation="relu"), rng, name="encoder/post")
    return EncoderWeights(point, post, embedding_dim)


def encode_cloud(points, weights: EncoderWeights) -> Tensor:
    """Embed a mean-centered cloud into a (1, embedding_dim) vector.

    Points are deduplicated and sorted before the per-point MLP: max pooling
    is blind to row order and multiplicity, and canonicalizing the rows makes
    the embedding bit-identical under any input reordering (BLAS kernels are
    not otherwise guaranteed to produce identical rows at different batch
    shapes).
    """
    pts = points.points if hasattr(points, "points") else points
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] != 3:
        raise InvalidInput(f"expected non-empty (N, 3) cloud, got {pts.shape}")
    pts = np.unique(pts, axis=0)
    feats = weights.point_mlp(Tensor(pts))
    pooled = maxpool_over_points(feats)
    return weights.post_mlp(pooled)


def positional_encoding(t, dims: int) -> np.ndarray:
    """Sinusoidal pairs sin(t / 10000^(2k/dims)), cos(t / 10000^(2k/dims))."""
    if dims % 2 != 0 or dims <= 0:
        raise InvalidInput("positional encoding dims must be a positive even number")
    k = np.arange(dims // 2, dtype=np.float64)
    freq = 1.0 / np.power(10000.0, 2.0 * k / dims)
    out = np.empty(dims)
    out[0::2] = np.sin(t * freq)
    out[1::2] = np.cos(t * freq)
    return out


# ---------------------------------------------------------------------------
# Optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ShapeError(f"adam_step: grad shape {g.shape} != param {p.data.shape} ({name})")
        if not np.all(np.isfinite(g)):
            raise OptimizerError(f"non-finite gradient for parameter {name!r}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def train_step(loss: Tensor, params: dict, state: AdamState, lr: float, **adam_kw) -> float:
    """Backward + Adam on one scalar loss; returns the loss value."""
    for p in params.values():
        p.zero_grad()
    loss.backward()
    grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    adam_step(params, grads, state, lr, **adam_kw)
    return float(loss.data)


# ---------------------------------------------------------------------------
# Checkpoint container
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"GGCK"
CHECKPOINT_VERSION = 1


def save_tensors(path, tensors: dict):
    """Write named float64 tensors: magic, version u32, count u32, then per
    tensor {name_len u16, name bytes, rank u8, dims u32[], float64 LE data}."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            # note: ascontiguousarray would promote 0-d arrays to 1-d
            arr = np.asarray(arr, dtype="<f8", order="C")
            nb = name.encode("utf-8")
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_tensors(path) -> dict:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise InvalidInput(f"bad checkpoint magic {magic!r}")
        version, count = struct.unpack("<II", f.read(8))
        if version != CHECKPOINT_VERSION:
            raise InvalidInput(f"unsupported checkpoint version {version}")
        out = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", f.read(2))
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<B", f.read(1))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank)) if rank else ()
            n = int(np.prod(dims)) if dims else 1
            data = np.frombuffer(f.read(8 * n), dtype="<f8").reshape(dims)
            out[name] = data.copy()
        return out


def string_to_floats(s: str) -> np.ndarray:
    """Encode a short string as byte values so it fits the tensor container."""
    return np.frombuffer(s.encode("utf-8"), dtype=np.uint8).astype(np.float64)


def floats_to_string(arr: np.ndarray) -> str:
    return np.asarray(arr).astype(np.uint8).tobytes().decode("utf-8")
