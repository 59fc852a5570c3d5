"""Dense numeric core: parameter vectors, classifier models, datasets.

Everything is 64-bit and pure: models and datasets are frozen after
construction, forward/backward passes are plain functions of (params, input).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

Layout = tuple[tuple[str, tuple[int, ...]], ...]


class DimensionError(ValueError):
    """Shape mismatch; the message names the offending segment or input."""


class NonFiniteError(FloatingPointError):
    """A pass produced NaN/Inf; the message carries layer or batch provenance."""


# ---------------------------------------------------------------------------
# Parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamVector:
    """Flat vector of all trainable parameters plus the segment layout.

    ``values`` is a contiguous float64 array; ``layout`` lists (name, shape)
    segments in flattening order. ``from_segments(unflatten(v))`` round-trips
    bit-exactly.
    """

    values: np.ndarray
    layout: Layout

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "layout", tuple((n, tuple(s)) for n, s in self.layout))
        total = sum(int(np.prod(s, dtype=np.int64)) for _, s in self.layout)
        if v.ndim != 1 or v.size != total:
            raise DimensionError(
                f"parameter vector has {v.size} entries but layout wants {total}")

    @property
    def size(self) -> int:
        return self.values.size

    def segment(self, name: str) -> np.ndarray:
        """Reshaped view of one named segment."""
        offset = 0
        for seg_name, shape in self.layout:
            n = int(np.prod(shape, dtype=np.int64))
            if seg_name == name:
                return self.values[offset:offset + n].reshape(shape)
            offset += n
        raise DimensionError(f"no parameter segment named {name!r}")

    def unflatten(self) -> dict[str, np.ndarray]:
        return {name: self.segment(name) for name, _ in self.layout}

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def from_segments(layout: Layout, segments: dict[str, np.ndarray]) -> ParamVector:
    """Flatten named arrays in layout order (bit-exact inverse of unflatten)."""
    parts = []
    for name, shape in layout:
        arr = np.asarray(segments[name], dtype=np.float64)
        if tuple(arr.shape) != tuple(shape):
            raise DimensionError(
                f"segment {name!r} has shape {arr.shape}, layout wants {tuple(shape)}")
        parts.append(arr.ravel())
    return ParamVector(np.concatenate(parts) if parts else np.zeros(0), layout)


# ---------------------------------------------------------------------------
# Architectures
# ---------------------------------------------------------------------------

def _stable_sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


_ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0),
             lambda z: (z > 0).astype(np.float64)),
    "tanh": (np.tanh,
             lambda z: 1.0 - np.tanh(z) ** 2),
    "sigmoid": (_stable_sigmoid,
                lambda z: _stable_sigmoid(z) * (1.0 - _stable_sigmoid(z))),
    "elu": (lambda z: np.where(z > 0, z, np.expm1(z)),
            lambda z: np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))),
}


@dataclass(frozen=True)
class LinearMulticlass:
    """K linear scores w_i . x, no bias."""

    m: int
    k: int

    @property
    def input_dim(self) -> int:
        return self.m

    @property
    def num_classes(self) -> int:
        return self.k

    def param_layout(self) -> Layout:
        return (("W", (self.k, self.m)),)


@dataclass(frozen=True)
class BinaryLogistic:
    """Single weight vector w; the two logits are [w.x, -w.x].

    The per-example loss is the logistic loss log(1 + exp(-s w.x)) with the
    signed label s = +1 for class 0 and -1 for class 1 (softmax cross-entropy
    of the half-gap logits).
    """

    m: int

    @property
    def input_dim(self) -> int:
        return self.m

    @property
    def num_classes(self) -> int:
        return 2

    def param_layout(self) -> Layout:
        return (("w", (self.m,)),)


@dataclass(frozen=True)
class Mlp:
    """Fully connected net; widths include input and output sizes."""

    widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if len(self.widths) < 2:
            raise ValueError("Mlp needs at least input and output widths")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        return self.widths[0]

    @property
    def num_classes(self) -> int:
        return self.widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    def param_layout(self) -> Layout:
        layout = []
        for l in range(self.n_layers):
            fan_in, fan_out = self.widths[l], self.widths[l + 1]
            layout.append((f"W{l}", (fan_out, fan_in)))
            layout.append((f"b{l}", (fan_out,)))
        return tuple(layout)


Arch = LinearMulticlass | BinaryLogistic | Mlp


@dataclass(frozen=True)
class Model:
    arch: Arch
    params: ParamVector

    def __post_init__(self):
        want = self.arch.param_layout()
        if self.params.layout != tuple((n, tuple(s)) for n, s in want):
            raise DimensionError("parameter layout does not match architecture")

    def with_params(self, params: ParamVector) -> "Model":
        return Model(self.arch, params)


def init_params(arch: Arch, rng: np.random.Generator, scale: float = 1.0) -> ParamVector:
    """Uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)) weights, zero biases."""
    segs = {}
    for name, shape in arch.param_layout():
        if name.startswith("b"):
            segs[name] = np.zeros(shape)
        else:
            fan_in = shape[-1]
            lim = scale * np.sqrt(6.0 / fan_in)
            segs[name] = rng.uniform(-lim, lim, size=shape)
    return from_segments(arch.param_layout(), segs)


def init_model(arch: Arch, rng: np.random.Generator, scale: float = 1.0) -> Model:
    return Model(arch, init_params(arch, rng, scale))


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Dataset:
    """Inputs (N, m), integer labels in [num_classes], optional box domain."""

    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    domain: tuple[float, float] | None = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.int64)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or x.shape[0] < 1:
            raise DimensionError("inputs must be a nonempty (N, m) matrix")
        if y.shape != (x.shape[0],):
            raise DimensionError("labels must be one integer per input row")
        if y.min() < 0 or y.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        if self.domain is not None:
            lo, hi = self.domain
            if x.min() < lo - 1e-12 or x.max() > hi + 1e-12:
                raise ValueError("inputs fall outside the declared domain box")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def take(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.domain)


def make_blobs(seed: int, n: int, m: int, k: int, margin: float,
               return_certificate: bool = False, sample_seed: int | None = None):
    """Linearly separable sign-corner blobs with l_inf margin >= margin.

    Class c sits at R * s_c for a distinct sign pattern s_c; points jitter
    uniformly within radius r around the center. With R - r >= margin the
    linear classifier with rows s_c certifies, for every point and every pair
    (y, j): (w_y - w_j) . x >= margin * ||w_y - w_j||_1.

    `sample_seed` draws a fresh sample of the SAME task (same class centers):
    use it to build held-out test splits.
    """
    if margin < 0:
        raise ValueError("margin must be >= 0")
    if m >= 63:
        n_patterns = None
    else:
        n_patterns = 2 ** m
        if k > n_patterns:
            raise ValueError(f"cannot place {k} classes on {n_patterns} sign corners (K > 2^m)")
    rng = np.random.default_rng(seed)
    r = 0.5
    radius = margin + r + 0.5

    patterns: list[tuple] = []
    seen = set()
    if n_patterns is not None and n_patterns <= 4096:
        corners = [tuple(2 * ((i >> j) & 1) - 1 for j in range(m)) for i in range(n_patterns)]
        order = rng.permutation(n_patterns)
        patterns = [corners[i] for i in order[:k]]
    else:
        while len(patterns) < k:
            p = tuple(int(v) for v in rng.integers(0, 2, size=m) * 2 - 1)
            if p not in seen:
                seen.add(p)
                patterns.append(p)
    centers = radius * np.array(patterns, dtype=np.float64)

    sample_rng = rng if sample_seed is None else np.random.default_rng(sample_seed)
    labels = np.arange(n, dtype=np.int64) % k
    sample_rng.shuffle(labels)
    inputs = centers[labels] + sample_rng.uniform(-r, r, size=(n, m))
    ds = Dataset(inputs, labels, num_classes=k)
    if return_certificate:
        return ds, np.array(patterns, dtype=np.float64)
    return ds


def make_image_task(seed: int, n: int, side: int = 28, num_classes: int = 10, *,
                    fg: float = 1.0, bg: float = 0.0, density: float = 0.25,
                    distinct: int = 40, flip_prob: float = 0.06,
                    noise: float = 0.08, sample_seed: int | None = None) -> Dataset:
    """Synthetic digit-style task in [0,1]^(side^2), quantized to uint8 levels.

    Classes share a common near-binary base pattern (density) and differ on a
    small set of `distinct` flipped pixels; per-sample pixel flips (flip_prob)
    and gaussian noise supply intra-class variation. Stands in for an MNIST
    subset when the real IDX files are not on disk: boundary-valued pixels,
    [0,1] domain, and class evidence concentrated on few pixels so that
    l_inf attacks genuinely erode it.

    Prototypes depend only on `seed`; `sample_seed` draws a fresh sample of
    the same task (held-out test splits).
    """
    rng = np.random.default_rng(seed)
    m = side * side
    base = rng.random(m) < density
    protos = np.empty((num_classes, m), dtype=bool)
    for c in range(num_classes):
        proto = base.copy()
        idx = rng.choice(m, size=min(distinct, m), replace=False)
        proto[idx] = ~proto[idx]
        protos[c] = proto
    sample_rng = rng if sample_seed is None else np.random.default_rng(sample_seed)
    labels = np.arange(n, dtype=np.int64) % num_classes
    sample_rng.shuffle(labels)
    masks = protos[labels]
    flips = sample_rng.random((n, m)) < flip_prob
    masks = masks ^ flips
    x = bg + (fg - bg) * masks.astype(np.float64)
    x += sample_rng.normal(0.0, noise, size=(n, m))
    x = np.clip(x, 0.0, 1.0)
    x = np.round(x * 255.0) / 255.0
    return Dataset(x, labels, num_classes=num_classes, domain=(0.0, 1.0))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------

def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-example softmax cross-entropy, shift-invariant by construction."""
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    return lse - z[np.arange(z.shape[0]), labels]


def _signed_labels(labels: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * labels  # class 0 -> +1, class 1 -> -1


def _check_input(arch: Arch, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != arch.input_dim:
        raise DimensionError(
            f"input has {X.shape[1]} features, arch segment expects {arch.input_dim}")
    return X


def _mlp_forward(arch: Mlp, params: ParamVector, X: np.ndarray):
    act, _ = _ACTIVATIONS[arch.activation]
    zs, acts = [], [X]
    A = X
    for l in range(arch.n_layers):
        Z = A @ params.segment(f"W{l}").T + params.segment(f"b{l}")
        zs.append(Z)
        A = act(Z) if l < arch.n_layers - 1 else Z
        acts.append(A)
    return zs, acts


def logits(model: Model, X: np.ndarray) -> np.ndarray:
    """Batched logits, shape (N, K)."""
    arch = model.arch
    X = _check_input(arch, X)
    if isinstance(arch, LinearMulticlass):
        out = X @ model.params.segment("W").T
    elif isinstance(arch, BinaryLogistic):
        s = X @ model.params.segment("w")
        out = np.stack([s, -s], axis=1)
    else:
        _, acts = _mlp_forward(arch, model.params, X)
        out = acts[-1]
    if not np.all(np.isfinite(out)):
        _raise_nonfinite(model, X)
    return out


def _raise_nonfinite(model: Model, X: np.ndarray):
    if isinstance(model.arch, Mlp):
        zs, _ = _mlp_forward(model.arch, model.params, X)
        for l, Z in enumerate(zs):
            if not np.all(np.isfinite(Z)):
                raise NonFiniteError(f"non-finite pre-activation at layer {l}")
    raise NonFiniteError("non-finite logits")


def forward_logits(model: Model, x: np.ndarray) -> np.ndarray:
    """Logit vector (length K) for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("forward_logits takes a single 1-D input")
    return logits(model, x[None, :])[0]


def per_example_loss(model: Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = logits(model, X)
    y = np.asarray(y, dtype=np.int64)
    if isinstance(model.arch, BinaryLogistic):
        s = _signed_labels(y)
        return np.logaddexp(0.0, -s * out[:, 0])
    return cross_entropy(out, y)


def mean_loss(model: Model, X: np.ndarray, y: np.ndarray) -> float:
    return float(per_example_loss(model, X, y).mean())


def batch_loss_grad_theta(model: Model, X: np.ndarray, y: np.ndarray):
    """(mean loss, gradient of the mean loss as a ParamVector)."""
    arch = model.arch
    X = _check_input(arch, X)
    y = np.asarray(y, dtype=np.int64)
    N = X.shape[0]
    layout = arch.param_layout()

    if isinstance(arch, LinearMulticlass):
        out = X @ model.params.segment("W").T
        loss = cross_entropy(out, y).mean()
        delta = softmax(out)
        delta[np.arange(N), y] -= 1.0
        grad = from_segments(layout, {"W": delta.T @ X / N})
    elif isinstance(arch, BinaryLogistic):
        w = model.params.segment("w")
        s = _signed_labels(y)
        z = s * (X @ w)
        loss = np.logaddexp(0.0, -z).mean()
        coeff = -s * _stable_sigmoid(-z)
        grad = from_segments(layout, {"w": (coeff[:, None] * X).mean(axis=0)})
    else:
        zs, acts = _mlp_forward(arch, model.params, X)
        out = acts[-1]
        if not np.all(np.isfinite(out)):
            _raise_nonfinite(model, X)
        loss = cross_entropy(out, y).mean()
        _, dact = _ACTIVATIONS[arch.activation]
        delta = softmax(out)
        delta[np.arange(N), y] -= 1.0
        segs = {}
        for l in range(arch.n_layers - 1, -1, -1):
            segs[f"W{l}"] = delta.T @ acts[l] / N
            segs[f"b{l}"] = delta.mean(axis=0)
            if l > 0:
                delta = (delta @ model.params.segment(f"W{l}")) * dact(zs[l - 1])
        grad = from_segments(layout, segs)
    if not np.all(np.isfinite(grad.values)):
        raise NonFiniteError("non-finite parameter gradient")
    return float(loss), grad


def loss_grad_theta(model: Model, x: np.ndarray, y: int):
    """Single-example (loss, gradient w.r.t. parameters)."""
    return batch_loss_grad_theta(model, np.asarray(x)[None, :], np.array([y]))


def batch_loss_grad_input(model: Model, X: np.ndarray, y: np.ndarray):
    """(per-example losses, per-example gradients w.r.t. the inputs)."""
    arch = model.arch
    X = _check_input(arch, X)
    y = np.asarray(y, dtype=np.int64)
    N = X.shape[0]

    if isinstance(arch, LinearMulticlass):
        W = model.params.segment("W")
        out = X @ W.T
        losses = cross_entropy(out, y)
        delta = softmax(out)
        delta[np.arange(N), y] -= 1.0
        grads = delta @ W
    elif isinstance(arch, BinaryLogistic):
        w = model.params.segment("w")
        s = _signed_labels(y)
        z = s * (X @ w)
        losses = np.logaddexp(0.0, -z)
        grads = (-s * _stable_sigmoid(-z))[:, None] * w[None, :]
    else:
        zs, acts = _mlp_forward(arch, model.params, X)
        out = acts[-1]
        if not np.all(np.isfinite(out)):
            _raise_nonfinite(model, X)
        losses = cross_entropy(out, y)
        _, dact = _ACTIVATIONS[arch.activation]
        delta = softmax(out)
        delta[np.arange(N), y] -= 1.0
        for l in range(arch.n_layers - 1, 0, -1):
            delta = (delta @ model.params.segment(f"W{l}")) * dact(zs[l - 1])
        grads = delta @ model.params.segment("W0")
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite input gradient")
    return losses, grads


def loss_grad_input(model: Model, x: np.ndarray, y: int) -> np.ndarray:
    """Gradient of the single-example loss w.r.t. the input."""
    _, g = batch_loss_grad_input(model, np.asarray(x)[None, :], np.array([y]))
    return g[0]


def predict(model: Model, X: np.ndarray) -> np.ndarray:
    return np.argmax(logits(model, X), axis=1)
