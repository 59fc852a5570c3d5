"""Closed forms for adversarial linear models: the adversarial logistic loss
with its gradient and Hessian, eigenvalue monotonicity in the budget, the
version space, the analytic lower bound on the worst-case multiclass loss,
the budget threshold above which the constant classifier is optimal, and
membership of scaled directions in that regime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import AdvBudget, bruteforce_adv_loss
from .core import LinearMulticlass, Model, ParamVector, _stable_sigmoid

DEFAULT_GAMMA_GRID = (0.25, 0.5, 1.0, 2.0, 4.0)


class CertificateError(ValueError):
    """A margin precondition is violated; the message names the first index."""


def dual_exponent(p: str) -> float:
    """q with 1/p + 1/q = 1 for p in {"inf", "two"}."""
    if p == "inf":
        return 1.0
    if p == "two":
        return 2.0
    raise ValueError(f"unsupported norm order {p!r}")


def _qnorm(v: np.ndarray, q: float) -> float:
    return float(np.sum(np.abs(v))) if q == 1.0 else float(np.linalg.norm(v))


@dataclass(frozen=True)
class LogisticProblem:
    """Binary problem with +-1 labels and the (p, q) dual norm pair."""

    inputs: np.ndarray
    labels: np.ndarray
    p: str = "inf"

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        y = np.ascontiguousarray(self.labels, dtype=np.float64)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if x.ndim != 2 or y.shape != (x.shape[0],):
            raise ValueError("inputs must be (N, m) with one label per row")
        if not np.all(np.abs(y) == 1.0):
            raise ValueError("labels must be +1 or -1")
        dual_exponent(self.p)

    @property
    def q(self) -> float:
        return dual_exponent(self.p)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]


def project_w(prob: LogisticProblem, w: np.ndarray) -> np.ndarray:
    """Renormalize w onto the unit l_q sphere."""
    w = np.asarray(w, dtype=np.float64)
    nrm = _qnorm(w, prob.q)
    if nrm == 0.0:
        raise ValueError("cannot normalize the zero vector")
    return w / nrm


def _check_w(prob: LogisticProblem, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if abs(_qnorm(w, prob.q) - 1.0) > 1e-8:
        raise ValueError("w must satisfy ||w||_q = 1 (use project_w)")
    return w


def adv_logistic_loss(prob: LogisticProblem, w: np.ndarray, eps: float,
                      check: bool = True) -> float:
    """(1/N) sum log(1 + exp(-(y_i w.x_i - eps))).

    ``check=False`` skips the unit-norm precondition so the surface can be
    probed off the sphere (finite differences, landscape slices).
    """
    w = _check_w(prob, w) if check else np.asarray(w, dtype=np.float64)
    z = prob.labels * (prob.inputs @ w) - eps
    return float(np.logaddexp(0.0, -z).mean())


def adv_logistic_grad_hessian(prob: LogisticProblem, w: np.ndarray, eps: float,
                              check: bool = True):
    """Closed-form (gradient, Hessian) of the adversarial logistic loss."""
    w = _check_w(prob, w) if check else np.asarray(w, dtype=np.float64)
    z = prob.labels * (prob.inputs @ w) - eps
    sig_neg = _stable_sigmoid(-z)
    grad = -((prob.labels * sig_neg)[:, None] * prob.inputs).mean(axis=0)
    coeff = _stable_sigmoid(z) * sig_neg
    hess = (prob.inputs * coeff[:, None]).T @ prob.inputs / prob.n
    return grad, hess


@dataclass(frozen=True)
class MarginCertificate:
    """Certified margin: y_i w.x_i >= eps_hat for every point, ||w||_q = 1."""

    eps_hat: float
    direction: np.ndarray


def certify_margin(prob: LogisticProblem, w: np.ndarray) -> MarginCertificate:
    w = _check_w(prob, w)
    margins = prob.labels * (prob.inputs @ w)
    return MarginCertificate(float(margins.min()), w)


@dataclass(frozen=True)
class EigMonotonicityReport:
    eps_grid: tuple[float, ...]
    lam_max: tuple[float, ...]
    lam_min: tuple[float, ...]
    monotone_max: bool
    monotone_min: bool
    monotone_directional: bool

    @property
    def passed(self) -> bool:
        return self.monotone_max and self.monotone_min and self.monotone_directional


def eig_monotonicity_check(prob: LogisticProblem, w: np.ndarray, eps_grid,
                           certificate: MarginCertificate | None = None,
                           n_directions: int = 8, rng: np.random.Generator | None = None,
                           slack: float = 1e-9) -> EigMonotonicityReport:
    """Largest/smallest Hessian eigenvalues (and sampled directional
    curvatures) must be nondecreasing over the eps grid on certified data."""
    w = _check_w(prob, w)
    eps_grid = tuple(float(e) for e in eps_grid)
    if certificate is None:
        certificate = certify_margin(prob, w)
    margins = prob.labels * (prob.inputs @ certificate.direction)
    if eps_grid:
        worst = int(np.argmin(margins))
        if margins[worst] < max(eps_grid) - 1e-12:
            raise CertificateError(
                f"margin {margins[worst]:.6g} at index {worst} is below the "
                f"largest budget {max(eps_grid):.6g}")
    rng = rng or np.random.default_rng(0)
    dirs = rng.normal(size=(n_directions, prob.inputs.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)

    lam_max, lam_min, curvatures = [], [], []
    for eps in eps_grid:
        _, H = adv_logistic_grad_hessian(prob, w, eps)
        vals = np.linalg.eigvalsh(H)
        lam_max.append(float(vals[-1]))
        lam_min.append(float(vals[0]))
        curvatures.append(np.einsum("ij,jk,ik->i", dirs, H, dirs))

    def nondecreasing(seq):
        return all(b >= a - slack for a, b in zip(seq, seq[1:]))

    monotone_dir = all(
        np.all(curvatures[i + 1] >= curvatures[i] - slack)
        for i in range(len(curvatures) - 1))
    return EigMonotonicityReport(eps_grid, tuple(lam_max), tuple(lam_min),
                                 nondecreasing(lam_max), nondecreasing(lam_min),
                                 monotone_dir)


# ---------------------------------------------------------------------------
# Multiclass linear results (l_inf budget)
# ---------------------------------------------------------------------------

def _as_weight_matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ValueError("W must be a (K, m) matrix of row weight vectors")
    return W


def multiclass_clean_loss(W, x, y: int) -> float:
    """log(1 + sum_{j != y} exp((w_j - w_y) . x))."""
    W = _as_weight_matrix(W)
    gaps = (W - W[y]) @ np.asarray(x, dtype=np.float64)
    gaps = np.delete(gaps, y)
    return float(np.logaddexp(0.0, _logsumexp(gaps)))


def _logsumexp(a: np.ndarray) -> float:
    hi = np.max(a)
    return float(hi + np.log(np.sum(np.exp(a - hi))))


def version_space_member(W, x, y: int, eps: float) -> bool:
    """True iff every class gap stays nonpositive over the whole l_inf ball:
    (w_i - w_y) . x + eps ||w_i - w_y||_1 <= 0 for all i."""
    W = _as_weight_matrix(W)
    x = np.asarray(x, dtype=np.float64)
    gaps = (W - W[y]) @ x + eps * np.abs(W - W[y]).sum(axis=1)
    return bool(np.all(gaps <= 0.0))


def _max_gap_row(W, y: int, q: float):
    W = _as_weight_matrix(W)
    diffs = W - W[y]
    norms = (np.abs(diffs).sum(axis=1) if q == 1.0
             else np.linalg.norm(diffs, axis=1))
    norms[y] = -np.inf
    m_idx = int(np.argmax(norms))
    return diffs, m_idx, float(norms[m_idx])


def g_lower_bound(W, x, y: int, eps: float, q: float = 1.0) -> float:
    """Analytic lower bound on the worst-case loss: the clean loss evaluated
    at the feasible perturbation aligned with the largest-gap row."""
    W = _as_weight_matrix(W)
    x = np.asarray(x, dtype=np.float64)
    diffs, m_idx, m_norm = _max_gap_row(W, y, q)
    if m_norm <= 0.0:
        return multiclass_clean_loss(W, x, y)
    v = diffs[m_idx]
    if q == 1.0:
        delta = eps * np.sign(v)
    else:
        delta = eps * v / m_norm
    return multiclass_clean_loss(W, x + delta, y)


def eps_bar(W, x, y: int, q: float = 1.0) -> float:
    """(log(K-1) - (w_m - w_y) . x) / ||w_m - w_y||_q for the largest-gap row m;
    above this budget the analytic lower bound reaches log K."""
    W = _as_weight_matrix(W)
    x = np.asarray(x, dtype=np.float64)
    diffs, m_idx, m_norm = _max_gap_row(W, y, q)
    if m_norm <= 0.0:
        raise ValueError("all rows equal w_y: eps_bar is undefined")
    k = W.shape[0]
    return (np.log(k - 1.0) - float(diffs[m_idx] @ x)) / m_norm


def t_set_member(W, x, y: int, eps: float, gammas=DEFAULT_GAMMA_GRID,
                 tol: float = 1e-9) -> bool:
    """True iff the exact worst-case loss along the scaled direction gamma*W
    is minimized at gamma = 0 over the symmetric grid (sound for membership
    up to grid resolution since the loss is convex in gamma)."""
    W = _as_weight_matrix(W)
    x = np.asarray(x, dtype=np.float64)
    k, m = W.shape
    baseline = np.log(k)
    budget = AdvBudget("inf", eps)
    arch = LinearMulticlass(m, k)
    for gamma in gammas:
        for sgn in (1.0, -1.0):
            model = Model(arch, ParamVector((sgn * gamma * W).ravel(), arch.param_layout()))
            val, _ = bruteforce_adv_loss(model, x, y, budget)
            if val < baseline - tol:
                return False
    return True
