"""Landscape probes: finite-difference Hessian-vector products, top-k
eigenpairs by power iteration with Gram-Schmidt deflation, loss-scale
normalization over random parameter draws, 2-D landscape grids, and the
perturbation-similarity probe.

Probes operate on loss/gradient oracles over the flat parameter vector, so
the exact vertex oracle can stand in for the PGD approximation on linear
models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .attack import AdvBudget, PgdConfig, pgd_batch, robust_error
from .core import (
    Dataset, Layout, Model, NonFiniteError, ParamVector, batch_loss_grad_theta,
    init_params, per_example_loss,
)
from .rng import RngStream

DEFAULT_FD_RADIUS = 1e-3
_CHUNK = 256


# ---------------------------------------------------------------------------
# Loss / gradient oracles over flat parameter vectors
# ---------------------------------------------------------------------------

def _attacked_inputs(model, dataset, budget, attack_cfg, stream):
    if budget is None or budget.eps == 0:
        return dataset.inputs
    out = np.empty_like(dataset.inputs)
    for start in range(0, dataset.n, _CHUNK):
        sl = slice(start, min(start + _CHUNK, dataset.n))
        out[sl] = pgd_batch(model, dataset.inputs[sl], dataset.labels[sl],
                            budget, attack_cfg, stream.child(f"chunk-{start}"))
    return out


def adversarial_loss_fn(model: Model, dataset: Dataset, budget: AdvBudget | None,
                        attack_cfg: PgdConfig | None, stream: RngStream):
    """Callable theta -> mean adversarial loss; adversarial examples are
    recomputed at every displaced theta. ``tag`` derives a fresh attack
    stream (per-cell rng for grids); the default tag makes the map
    theta -> loss deterministic."""

    def loss(theta: np.ndarray, tag: str = "eval") -> float:
        m = model.with_params(model.params.with_values(theta))
        adv = _attacked_inputs(m, dataset, budget, attack_cfg, stream.child(tag))
        return float(per_example_loss(m, adv, dataset.labels).mean())

    return loss


def adversarial_grad_fn(model: Model, dataset: Dataset, budget: AdvBudget | None,
                        attack_cfg: PgdConfig | None, stream: RngStream):
    """Callable theta -> gradient of the mean adversarial loss (flat array)."""

    def grad(theta: np.ndarray, tag: str = "eval") -> np.ndarray:
        m = model.with_params(model.params.with_values(theta))
        adv = _attacked_inputs(m, dataset, budget, attack_cfg, stream.child(tag))
        _, g = batch_loss_grad_theta(m, adv, dataset.labels)
        return g.values

    return grad


# ---------------------------------------------------------------------------
# Hessian-vector products and eigenpairs
# ---------------------------------------------------------------------------

def hvp(grad_fn, theta: np.ndarray, v: np.ndarray,
        radius: float = DEFAULT_FD_RADIUS) -> np.ndarray:
    """Central-difference Hessian-vector product (grad(t+rv)-grad(t-rv))/2r."""
    v = np.asarray(v, dtype=np.float64)
    nrm = np.linalg.norm(v)
    if abs(nrm - 1.0) > 1e-8:
        raise ValueError("hvp expects a unit direction vector")
    theta = np.asarray(theta, dtype=np.float64)
    g_plus = grad_fn(theta + radius * v)
    g_minus = grad_fn(theta - radius * v)
    out = (g_plus - g_minus) / (2.0 * radius)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite gradient inside the hvp stencil")
    return out


def hessian_matvec(model: Model, dataset: Dataset, budget: AdvBudget | None,
                   attack_cfg: PgdConfig | None, stream: RngStream,
                   radius: float = DEFAULT_FD_RADIUS):
    """Matvec closure for the adversarial-loss Hessian at the model's params."""
    grad = adversarial_grad_fn(model, dataset, budget, attack_cfg, stream)
    theta = model.params.values

    def matvec(v: np.ndarray) -> np.ndarray:
        return hvp(grad, theta, v, radius=radius)

    return matvec


@dataclass(frozen=True)
class EigenReport:
    """Top-k eigenpairs, descending by eigenvalue. ``normalized`` divides by
    the loss-scale constant when one is supplied."""

    eigenvalues: tuple[float, ...]
    eigenvectors: tuple[np.ndarray, ...]
    converged: tuple[bool, ...]
    iterations: tuple[int, ...]
    normalization: float | None = None
    layout: Layout | None = None

    @property
    def normalized(self) -> tuple[float, ...] | None:
        if self.normalization is None:
            return None
        return tuple(v / self.normalization for v in self.eigenvalues)

    def eigvec_params(self, i: int) -> ParamVector:
        if self.layout is None:
            raise ValueError("no parameter layout attached to this report")
        return ParamVector(self.eigenvectors[i], self.layout)

    def with_normalization(self, constant: float) -> "EigenReport":
        return EigenReport(self.eigenvalues, self.eigenvectors, self.converged,
                           self.iterations, constant, self.layout)

    def to_json(self) -> str:
        payload = {
            "eigenvalues": list(self.eigenvalues),
            "converged": list(self.converged),
            "iterations": list(self.iterations),
            "normalization": self.normalization,
            "normalized": None if self.normalization is None else list(self.normalized),
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _deflate(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for b in basis:
        v = v - np.dot(b, v) * b
    return v


def top_eigenpairs(matvec, dim: int, k: int, *, tol: float = 1e-6,
                   max_iters: int = 200, stream: RngStream,
                   layout: Layout | None = None) -> EigenReport:
    """Power iteration; previously accepted eigenvectors are deflated out
    after every matvec. Convergence: relative change of the Rayleigh quotient
    below tol. Eigenvalues are signed Rayleigh quotients."""
    if k < 1:
        raise ValueError("k must be >= 1")
    vecs: list[np.ndarray] = []
    vals: list[float] = []
    flags: list[bool] = []
    iters: list[int] = []
    for i in range(k):
        rng = stream.child(f"eig-{i}").generator()
        v = rng.normal(size=dim)
        v = _deflate(v, vecs)
        v /= np.linalg.norm(v)
        lam_prev = np.inf
        lam = 0.0
        converged = False
        it = 0
        for it in range(1, max_iters + 1):
            Hv = _deflate(matvec(v), vecs)
            lam = float(np.dot(v, Hv))
            nrm = np.linalg.norm(Hv)
            if nrm < 1e-14:
                converged = True  # v sits in the (deflated) null space
                break
            if abs(lam - lam_prev) <= tol * max(abs(lam), 1e-30):
                converged = True
                break
            v = _deflate(Hv / nrm, vecs)
            v /= np.linalg.norm(v)
            lam_prev = lam
        vecs.append(v)
        vals.append(lam)
        flags.append(converged)
        iters.append(it)
    order = np.argsort(vals)[::-1]
    return EigenReport(tuple(vals[i] for i in order),
                       tuple(vecs[i] for i in order),
                       tuple(flags[i] for i in order),
                       tuple(iters[i] for i in order),
                       layout=layout)


def normalization_constant(arch, dataset: Dataset, budget: AdvBudget | None,
                           attack_cfg: PgdConfig | None, stream: RngStream,
                           n_samples: int = 10, init_scale: float = 1.0) -> float:
    """Mean adversarial loss over freshly initialized parameter draws; used to
    remove the loss-scale effect when comparing Hessian spectra across
    budgets."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    total = 0.0
    for i in range(n_samples):
        params = init_params(arch, stream.child(f"draw-{i}").generator(), scale=init_scale)
        m = Model(arch, params)
        adv = _attacked_inputs(m, dataset, budget, attack_cfg, stream.child(f"attack-{i}"))
        total += float(per_example_loss(m, adv, dataset.labels).mean())
    return total / n_samples


# ---------------------------------------------------------------------------
# Landscape grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LandscapeGrid:
    a1: np.ndarray
    a2: np.ndarray
    values: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    def to_csv(self) -> str:
        lines = ["a1,a2,loss"]
        for i, a in enumerate(self.a1):
            for j, b in enumerate(self.a2):
                lines.append(f"{float(a)!r},{float(b)!r},{float(self.values[i, j])!r}")
        return "\n".join(lines) + "\n"


def landscape_grid(loss_fn, theta: np.ndarray, v1: np.ndarray, v2: np.ndarray,
                   half_width: float, resolution: int) -> LandscapeGrid:
    """Loss over theta + a1 v1 + a2 v2 on a square grid; the loss oracle is
    re-invoked per cell with a per-cell tag (fresh attack rng per cell)."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    for name, v in (("v1", v1), ("v2", v2)):
        if abs(np.linalg.norm(v) - 1.0) > 1e-6:
            raise ValueError(f"{name} must be unit norm")
    if abs(np.dot(v1, v2)) > 1e-6:
        raise ValueError("v1 and v2 must be orthogonal within 1e-6")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    axis = np.linspace(-half_width, half_width, resolution)
    values = np.empty((resolution, resolution))
    for i, a in enumerate(axis):
        for j, b in enumerate(axis):
            point = theta + a * v1 + b * v2
            try:
                values[i, j] = loss_fn(point, tag=f"cell-{i}-{j}")
            except TypeError:
                values[i, j] = loss_fn(point)
    return LandscapeGrid(axis.copy(), axis.copy(), values, v1, v2)


# ---------------------------------------------------------------------------
# Perturbation similarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityReport:
    similarity: float
    repeat_means: tuple[float, ...]
    repeat_variance: float
    n_excluded: int
    robust_err_plus: float
    robust_err_minus: float
    test_err_plus: float | None = None
    test_err_minus: float | None = None


def perturb_similarity(model: Model, dataset: Dataset, v: np.ndarray, a: float,
                       budget: AdvBudget, attack_cfg: PgdConfig, stream: RngStream,
                       repeats: int = 4, test_dataset: Dataset | None = None) -> SimilarityReport:
    """Mean cosine similarity between the input perturbations produced at
    theta + a v and theta - a v (same attack streams on both sides, so a = 0
    with shared starts gives exactly 1). Zero perturbations are excluded from
    the mean and counted."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    v = np.asarray(v, dtype=np.float64)
    if abs(np.linalg.norm(v) - 1.0) > 1e-8:
        raise ValueError("v must be a unit vector")
    theta = model.params.values
    model_p = model.with_params(model.params.with_values(theta + a * v))
    model_m = model.with_params(model.params.with_values(theta - a * v))

    means = []
    excluded = 0
    for rep in range(repeats):
        rep_stream = stream.child(f"rep-{rep}")
        adv_p = _attacked_inputs(model_p, dataset, budget, attack_cfg, rep_stream)
        adv_m = _attacked_inputs(model_m, dataset, budget, attack_cfg, rep_stream)
        pert_p = adv_p - dataset.inputs
        pert_m = adv_m - dataset.inputs
        n_p = np.linalg.norm(pert_p, axis=1)
        n_m = np.linalg.norm(pert_m, axis=1)
        keep = (n_p > 0) & (n_m > 0)
        excluded += int(np.sum(~keep))
        if not np.any(keep):
            means.append(1.0)  # both sides unperturbed everywhere
            continue
        cos = np.sum(pert_p[keep] * pert_m[keep], axis=1) / (n_p[keep] * n_m[keep])
        means.append(float(cos.mean()))
    sim = float(np.mean(means))
    var = float(np.var(means))

    err_p = robust_error(model_p, dataset, budget, attack_cfg, stream.child("err-plus"))
    err_m = robust_error(model_m, dataset, budget, attack_cfg, stream.child("err-minus"))
    test_p = test_m = None
    if test_dataset is not None:
        test_p = robust_error(model_p, test_dataset, budget, attack_cfg,
                              stream.child("test-err-plus"))
        test_m = robust_error(model_m, test_dataset, budget, attack_cfg,
                              stream.child("test-err-minus"))
    return SimilarityReport(sim, tuple(means), var, excluded, err_p, err_m,
                            test_p, test_m)
