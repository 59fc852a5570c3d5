"""Inner maximization: FGSM, PGD, an exact vertex oracle for linear models,
and robust-error evaluation.

All attacks are pure given an explicit rng stream and never leave the budget
ball or the input domain box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    Dataset, LinearMulticlass, Model, batch_loss_grad_input, cross_entropy,
    per_example_loss, predict,
)
from .rng import RngStream

VERTEX_ORACLE_MAX_DIM = 20
_CHUNK = 256


class OracleBoundError(ValueError):
    """Vertex enumeration refused; the message names the dimension bound."""


@dataclass(frozen=True)
class AdvBudget:
    """l_p ball constraint: p in {"inf", "two"}, radius eps, optional box."""

    p: str
    eps: float
    domain_clip: tuple[float, float] | None = None

    def __post_init__(self):
        if self.p not in ("inf", "two"):
            raise ValueError(f"unsupported norm order {self.p!r}")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    def with_eps(self, eps: float) -> "AdvBudget":
        return AdvBudget(self.p, eps, self.domain_clip)


@dataclass(frozen=True)
class PgdConfig:
    steps: int
    step_size: float
    random_start: bool = True
    restarts: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.step_size <= 0:
            raise ValueError("step_size must be > 0")


def mnist_style_pgd(eps: float, random_start: bool = True, restarts: int = 1) -> PgdConfig:
    """Step 0.01, ceil(eps/0.01)+10 iterations."""
    return PgdConfig(steps=math.ceil(eps / 0.01) + 10, step_size=0.01,
                     random_start=random_start, restarts=restarts)


def cifar_style_pgd(eps: float, random_start: bool = True, restarts: int = 1) -> PgdConfig:
    """10 iterations, step eps/4."""
    return PgdConfig(steps=10, step_size=eps / 4.0,
                     random_start=random_start, restarts=restarts)


def project(X_adv: np.ndarray, X0: np.ndarray, budget: AdvBudget) -> np.ndarray:
    """Project onto the eps-ball around X0, then clamp to the domain box."""
    delta = X_adv - X0
    if budget.p == "inf":
        np.clip(delta, -budget.eps, budget.eps, out=delta)
    else:
        norms = np.linalg.norm(delta, axis=-1, keepdims=True)
        scale = np.minimum(1.0, budget.eps / np.maximum(norms, 1e-300))
        delta *= scale
    out = X0 + delta
    if budget.domain_clip is not None:
        lo, hi = budget.domain_clip
        np.clip(out, lo, hi, out=out)
    return out


def fgsm_batch(model: Model, X: np.ndarray, y: np.ndarray, budget: AdvBudget) -> np.ndarray:
    if budget.p != "inf":
        raise ValueError("fgsm is defined for the l_inf budget only")
    if budget.eps == 0:
        return np.array(X, dtype=np.float64)
    _, G = batch_loss_grad_input(model, X, y)
    return project(X + budget.eps * np.sign(G), np.asarray(X, dtype=np.float64), budget)


def fgsm(model: Model, x: np.ndarray, y: int, budget: AdvBudget) -> np.ndarray:
    """Single signed-gradient step of size eps."""
    return fgsm_batch(model, np.asarray(x)[None, :], np.array([y]), budget)[0]


def _random_start(X: np.ndarray, budget: AdvBudget, rng: np.random.Generator) -> np.ndarray:
    n, m = X.shape
    if budget.p == "inf":
        start = X + rng.uniform(-budget.eps, budget.eps, size=(n, m))
    else:
        direction = rng.normal(size=(n, m))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-300)
        radius = budget.eps * rng.uniform(0.0, 1.0, size=(n, 1)) ** (1.0 / m)
        start = X + radius * direction
    return project(start, X, budget)


def pgd_batch(model: Model, X: np.ndarray, y: np.ndarray, budget: AdvBudget,
              cfg: PgdConfig, stream: RngStream) -> np.ndarray:
    """Best-of PGD over restarts; the clean point and every visited iterate are
    retained as candidates, so the returned loss never drops below either."""
    X = np.array(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if budget.eps == 0:
        return X
    best_X = X.copy()
    best_loss = per_example_loss(model, X, y)

    def swallow(cand, losses):
        nonlocal best_X, best_loss
        better = losses >= best_loss
        best_X[better] = cand[better]
        best_loss = np.where(better, losses, best_loss)

    for r in range(cfg.restarts):
        if cfg.random_start:
            cur = _random_start(X, budget, stream.child(f"restart-{r}").generator())
        else:
            cur = X.copy()
        for _ in range(cfg.steps):
            losses, G = batch_loss_grad_input(model, cur, y)
            swallow(cur, losses)
            if budget.p == "inf":
                cur = cur + cfg.step_size * np.sign(G)
            else:
                norms = np.linalg.norm(G, axis=1, keepdims=True)
                unit = np.divide(G, norms, out=np.zeros_like(G), where=norms > 0)
                cur = cur + cfg.step_size * unit
            cur = project(cur, X, budget)
        swallow(cur, per_example_loss(model, cur, y))
    return best_X


def pgd(model: Model, x: np.ndarray, y: int, budget: AdvBudget,
        cfg: PgdConfig, stream: RngStream) -> np.ndarray:
    """Iterated projected signed-gradient ascent, single example."""
    return pgd_batch(model, np.asarray(x)[None, :], np.array([y]), budget, cfg, stream)[0]


def _feasible_box(x: np.ndarray, budget: AdvBudget) -> tuple[np.ndarray, np.ndarray]:
    lo = x - budget.eps
    hi = x + budget.eps
    if budget.domain_clip is not None:
        lo = np.maximum(lo, budget.domain_clip[0])
        hi = np.minimum(hi, budget.domain_clip[1])
    return lo, hi


def bruteforce_adv_loss(model: Model, x: np.ndarray, y: int, budget: AdvBudget):
    """Exact worst-case loss of a linear multiclass model over the l_inf ball.

    The per-example loss is convex in the input, hence maximized at a vertex
    of the feasible box; all 2^m vertices are enumerated.
    Returns (max loss, maximizing input).
    """
    if not isinstance(model.arch, LinearMulticlass):
        raise TypeError("vertex oracle applies to LinearMulticlass models only")
    if budget.p != "inf":
        raise ValueError("vertex oracle applies to the l_inf budget only")
    x = np.asarray(x, dtype=np.float64)
    m = x.size
    if m > VERTEX_ORACLE_MAX_DIM:
        raise OracleBoundError(
            f"vertex enumeration needs 2^m evaluations; m={m} exceeds the bound "
            f"m <= {VERTEX_ORACLE_MAX_DIM}")
    lo, hi = _feasible_box(x, budget)
    W = model.params.segment("W")
    bits = np.arange(m)
    best_loss = -np.inf
    best_vertex = x.copy()
    labels_chunk = None
    for start in range(0, 2 ** m, _CHUNK):
        idx = np.arange(start, min(start + _CHUNK, 2 ** m), dtype=np.int64)
        mask = ((idx[:, None] >> bits) & 1).astype(bool)
        verts = np.where(mask, hi, lo)
        out = verts @ W.T
        if labels_chunk is None or labels_chunk.size != idx.size:
            labels_chunk = np.full(idx.size, y, dtype=np.int64)
        losses = cross_entropy(out, labels_chunk)
        j = int(np.argmax(losses))
        if losses[j] > best_loss:
            best_loss = float(losses[j])
            best_vertex = verts[j]
    return best_loss, best_vertex


def robust_error(model: Model, dataset: Dataset, budget: AdvBudget,
                 cfg: PgdConfig, stream: RngStream) -> float:
    """Fraction of the dataset misclassified after a PGD attack."""
    if dataset.n == 0:
        raise ValueError("robust_error needs a nonempty dataset")
    wrong = 0
    for start in range(0, dataset.n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, dataset.n))
        X, y = dataset.inputs[sl], dataset.labels[sl]
        if budget.eps == 0:
            adv = X
        else:
            adv = pgd_batch(model, X, y, budget, cfg, stream.child(f"chunk-{start}"))
        wrong += int(np.sum(predict(model, adv) != y))
    return wrong / dataset.n
