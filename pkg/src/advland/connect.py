"""Mode connectivity: Bezier curves between two trained parameter vectors,
Monte Carlo training of the interior control points against the average
adversarial loss along the path, and path evaluation with barrier heights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attack import AdvBudget, PgdConfig, pgd_batch, robust_error
from .core import Dataset, Model, ParamVector, batch_loss_grad_theta, per_example_loss
from .rng import RngStream
from .train import OptimizerState, optimizer_step


@dataclass(frozen=True)
class BezierCurve:
    """Control points of an order-n Bezier curve in parameter space; the
    first and last control points are the (frozen) endpoint models."""

    arch: object
    controls: tuple[ParamVector, ...]

    def __post_init__(self):
        if len(self.controls) < 2:
            raise ValueError("a curve needs at least its two endpoints")

    @property
    def order(self) -> int:
        return len(self.controls) - 1

    @property
    def dim(self) -> int:
        return self.controls[0].size


def make_curve(model_a: Model, model_b: Model, order: int) -> BezierCurve:
    """Curve between two trained models; interior control points start on the
    straight segment between the endpoints."""
    if model_a.arch != model_b.arch:
        raise ValueError("endpoint models must share one architecture")
    if order < 1:
        raise ValueError("order must be >= 1")
    a, b = model_a.params, model_b.params
    controls = [a.copy()]
    for i in range(1, order):
        frac = i / order
        controls.append(a.with_values((1.0 - frac) * a.values + frac * b.values))
    controls.append(b.copy())
    return BezierCurve(model_a.arch, tuple(controls))


def bernstein_coefficients(order: int, t: float) -> np.ndarray:
    """C(n, i) (1-t)^(n-i) t^i for i = 0..n; sums to 1."""
    return np.array([math.comb(order, i) * (1.0 - t) ** (order - i) * t ** i
                     for i in range(order + 1)])


def bezier_point(curve: BezierCurve, t: float) -> ParamVector:
    """Point on the curve; exact endpoints at t = 0 and t = 1."""
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t={t} outside [0, 1]")
    if t == 0.0:
        return curve.controls[0]
    if t == 1.0:
        return curve.controls[-1]
    coeffs = bernstein_coefficients(curve.order, t)
    values = np.zeros(curve.dim)
    for c, ctrl in zip(coeffs, curve.controls):
        values += c * ctrl.values
    return curve.controls[0].with_values(values)


def train_curve(curve: BezierCurve, dataset: Dataset, budget: AdvBudget,
                attack_cfg: PgdConfig, optimizer: OptimizerState, steps: int,
                lr: float, stream: RngStream, batch_size: int = 128) -> BezierCurve:
    """Minimize the expected adversarial loss along the path by Monte Carlo:
    one t ~ U[0,1] per step, gradient routed to the interior control points
    through their Bernstein weights. Endpoints are returned bit-identical."""
    if curve.order < 2:
        raise ValueError("no interior control points to train (order < 2)")
    batch_size = min(batch_size, dataset.n)
    interior = np.concatenate([c.values for c in curve.controls[1:-1]])
    dim = curve.dim
    n_inner = curve.order - 1
    head = curve.controls[0]
    tail = curve.controls[-1]

    for step in range(steps):
        step_stream = stream.child(f"step-{step}")
        t = float(step_stream.child("t").generator().uniform())
        coeffs = bernstein_coefficients(curve.order, t)
        theta = coeffs[0] * head.values + coeffs[-1] * tail.values
        for i in range(n_inner):
            theta += coeffs[i + 1] * interior[i * dim:(i + 1) * dim]
        model_t = Model(curve.arch, head.with_values(theta))

        idx = step_stream.child("batch").generator().choice(dataset.n, size=batch_size,
                                                            replace=False)
        X, yb = dataset.inputs[idx], dataset.labels[idx]
        if budget.eps > 0:
            X = pgd_batch(model_t, X, yb, budget, attack_cfg, step_stream.child("pgd"))
        _, grad = batch_loss_grad_theta(model_t, X, yb)
        chained = np.concatenate([coeffs[i + 1] * grad.values for i in range(n_inner)])
        stacked = ParamVector(interior, (("interior", (interior.size,)),))
        stacked = optimizer_step(optimizer, stacked,
                                 ParamVector(chained, stacked.layout), lr)
        interior = stacked.values

    controls = [head]
    controls.extend(head.with_values(interior[i * dim:(i + 1) * dim].copy())
                    for i in range(n_inner))
    controls.append(tail)
    return BezierCurve(curve.arch, tuple(controls))


@dataclass(frozen=True)
class CurveEval:
    ts: tuple[float, ...]
    train_losses: tuple[float, ...]
    test_robust_errors: tuple[float, ...]

    @property
    def barrier(self) -> float:
        """Max path loss minus the larger endpoint loss."""
        return max(self.train_losses) - max(self.train_losses[0], self.train_losses[-1])

    def to_csv(self) -> str:
        lines = ["t,train_loss,test_robust_error"]
        lines.extend(f"{t!r},{l!r},{e!r}" for t, l, e in
                     zip(self.ts, self.train_losses, self.test_robust_errors))
        return "\n".join(lines) + "\n"


def eval_curve(curve: BezierCurve, dataset_train: Dataset, dataset_test: Dataset,
               budget: AdvBudget, attack_cfg: PgdConfig, resolution: int,
               stream: RngStream) -> CurveEval:
    """Adversarial train loss and test robust error on a uniform t grid
    including both endpoints."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    ts, losses, errors = [], [], []
    for i in range(resolution):
        t = i / (resolution - 1)
        model_t = Model(curve.arch, bezier_point(curve, t))
        t_stream = stream.child(f"t-{i}")
        X = dataset_train.inputs
        if budget.eps > 0:
            X = pgd_batch(model_t, X, dataset_train.labels, budget, attack_cfg,
                          t_stream.child("train-attack"))
        losses.append(float(per_example_loss(model_t, X, dataset_train.labels).mean()))
        errors.append(robust_error(model_t, dataset_test, budget, attack_cfg,
                                   t_stream.child("test-attack")))
        ts.append(t)
    return CurveEval(tuple(ts), tuple(losses), tuple(errors))
