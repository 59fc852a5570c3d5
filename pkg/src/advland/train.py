"""Outer minimization: optimizers, the adversarial training loop with budget
and learning-rate scheduling, per-batch telemetry, period snapshots, snapshot
ensembling, and the dead-neuron probe.

The loop is deterministic given the rng stream: shuffling, attack random
starts and reduction order all derive from named child streams.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attack import AdvBudget, PgdConfig, pgd_batch, robust_error
from .core import (
    Dataset, Mlp, Model, NonFiniteError, ParamVector, _mlp_forward,
    batch_loss_grad_theta, predict, softmax,
)
from .rng import RngStream
from .schedule import EpsScheduler, LrSchedule, PeriodPlan, eps_at, lr_at, single_period

DIVERGENCE_SENTINEL_ERROR = 0.9
TELEMETRY_HEADER = "batch,epoch,grad_norm,robust_err,dist_init,loss,eps,lr"


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """SGD (optionally with momentum) or Adam; moment buffers live here."""

    kind: str
    momentum: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step_count: int = 0
    buf1: np.ndarray | None = field(default=None, repr=False)
    buf2: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")

    def reset(self):
        self.step_count = 0
        self.buf1 = None
        self.buf2 = None


def sgd(momentum: float = 0.0) -> OptimizerState:
    return OptimizerState("sgd", momentum=momentum)


def adam(beta1: float = 0.9, beta2: float = 0.999, eps_hat: float = 1e-8) -> OptimizerState:
    return OptimizerState("adam", beta1=beta1, beta2=beta2, eps_hat=eps_hat)


def optimizer_step(state: OptimizerState, params: ParamVector, grad: ParamVector,
                   lr: float) -> ParamVector:
    """One update; mutates the optimizer buffers, returns the new parameters."""
    g = grad.values
    if g.shape != params.values.shape:
        raise ValueError("gradient shape does not match the parameter vector")
    if not np.all(np.isfinite(g)):
        raise NonFiniteError("non-finite gradient passed to the optimizer")
    state.step_count += 1
    if state.kind == "sgd":
        if state.momentum == 0.0:
            update = lr * g
        else:
            if state.buf1 is None:
                state.buf1 = np.zeros_like(g)
            state.buf1 = state.momentum * state.buf1 + g
            update = lr * state.buf1
    else:
        if state.buf1 is None:
            state.buf1 = np.zeros_like(g)
            state.buf2 = np.zeros_like(g)
        state.buf1 = state.beta1 * state.buf1 + (1.0 - state.beta1) * g
        state.buf2 = state.beta2 * state.buf2 + (1.0 - state.beta2) * g * g
        m_hat = state.buf1 / (1.0 - state.beta1 ** state.step_count)
        v_hat = state.buf2 / (1.0 - state.beta2 ** state.step_count)
        update = lr * m_hat / (np.sqrt(v_hat) + state.eps_hat)
    return params.with_values(params.values - update)


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TelemetryRecord:
    batch: int
    epoch: int
    grad_norm: float
    robust_err: float
    dist_init: float
    loss: float
    eps: float
    lr: float

    def csv_row(self) -> str:
        return (f"{self.batch},{self.epoch},{self.grad_norm!r},{self.robust_err!r},"
                f"{self.dist_init!r},{self.loss!r},{self.eps!r},{self.lr!r}")


@dataclass
class TrainResult:
    model: Model
    snapshots: list[tuple[int, ParamVector]]
    telemetry: list[TelemetryRecord]
    diverged: bool


def train_adversarial(model: Model, dataset: Dataset, *, eps_sched: EpsScheduler,
                      lr_sched: LrSchedule, optimizer: OptimizerState,
                      attack_cfg, epochs: int, batch_size: int = 128,
                      stream: RngStream, budget: AdvBudget | None = None,
                      periods: PeriodPlan | None = None,
                      weight_decay: float = 0.0) -> TrainResult:
    """PGD adversarial training of the min-max objective.

    Per batch: attack at the scheduled budget, take one optimizer step at the
    scheduled rate, record telemetry (state before the update, so
    dist_init = 0 at batch 0). ``attack_cfg`` is a PgdConfig or a callable
    eps -> PgdConfig. On divergence (non-finite loss/grad/params) training
    stops, the last finite parameters are returned and ``diverged`` is set.
    """
    if batch_size > dataset.n:
        raise ValueError("batch size exceeds the dataset size")
    if periods is None:
        periods = single_period(epochs)
    if periods.total_epochs != epochs:
        raise ValueError("period plan must cover exactly the requested epochs")
    if budget is None:
        budget = AdvBudget("inf", 0.0, domain_clip=dataset.domain)

    theta0 = model.params.values.copy()
    cur = model
    last_finite = model.params
    records: list[TelemetryRecord] = []
    snapshots: list[tuple[int, ParamVector]] = []
    diverged = False
    global_batch = 0
    nominal = periods.total_epochs

    for epoch in range(epochs):
        period = periods.period_of(epoch)
        eps_d = eps_at(eps_sched, epoch, period, nominal=nominal)
        lr_d = lr_at(lr_sched, epoch, period, nominal=nominal)
        cfg = attack_cfg(eps_d) if callable(attack_cfg) else attack_cfg
        epoch_stream = stream.child(f"epoch-{epoch}")
        order = epoch_stream.child("shuffle").generator().permutation(dataset.n)

        for b, start in enumerate(range(0, dataset.n, batch_size)):
            idx = order[start:start + batch_size]
            X, yb = dataset.inputs[idx], dataset.labels[idx]
            bud = budget.with_eps(eps_d)
            try:
                if eps_d > 0:
                    adv = pgd_batch(cur, X, yb, bud, cfg,
                                    epoch_stream.child(f"batch-{b}/pgd"))
                else:
                    adv = X
                loss, grad = batch_loss_grad_theta(cur, adv, yb)
            except NonFiniteError:
                diverged = True
                break
            grad_norm = float(np.linalg.norm(grad.values))
            dist_init = float(np.linalg.norm(cur.params.values - theta0))
            # Telemetry must stay finite; overflow anywhere counts as divergence
            # even when a saturating loss still reads as a finite number.
            if not (np.isfinite(loss) and np.isfinite(grad_norm) and np.isfinite(dist_init)):
                diverged = True
                break
            batch_err = float(np.mean(predict(cur, adv) != yb))
            records.append(TelemetryRecord(
                batch=global_batch, epoch=epoch, grad_norm=grad_norm,
                robust_err=batch_err, dist_init=dist_init,
                loss=loss, eps=eps_d, lr=lr_d))
            last_finite = cur.params
            if weight_decay != 0.0:
                grad = grad.with_values(grad.values + weight_decay * cur.params.values)
            new_params = optimizer_step(optimizer, cur.params, grad, lr_d)
            if not np.all(np.isfinite(new_params.values)):
                diverged = True
                break
            cur = cur.with_params(new_params)
            global_batch += 1
        if diverged:
            break
        if periods.snapshot_at_period_end and periods.is_period_end(epoch):
            snapshots.append((epoch, cur.params.copy()))

    final = cur if not diverged else cur.with_params(last_finite)
    return TrainResult(final, snapshots, records, diverged)


def telemetry_csv(records) -> str:
    """CSV body (header + one row per record) for the telemetry series."""
    lines = [TELEMETRY_HEADER]
    lines.extend(r.csv_row() for r in records)
    return "\n".join(lines) + "\n"


def final_robust_error(result: TrainResult, dataset: Dataset, budget: AdvBudget,
                       cfg: PgdConfig, stream: RngStream) -> float:
    """Robust error of a finished run; diverged runs report the 0.9 sentinel."""
    if result.diverged:
        return DIVERGENCE_SENTINEL_ERROR
    return robust_error(result.model, dataset, budget, cfg, stream)


# ---------------------------------------------------------------------------
# Snapshot ensembles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Ensemble:
    """Members share one architecture; predictions average softmax outputs."""

    arch: object
    members: tuple[ParamVector, ...]

    def __post_init__(self):
        if len(self.members) == 0:
            raise ValueError("ensemble needs at least one member")


def ensemble_from_snapshots(arch, snapshots) -> Ensemble:
    return Ensemble(arch, tuple(p for _, p in snapshots))


def ensemble_predict_batch(ensemble: Ensemble, X: np.ndarray) -> np.ndarray:
    from .core import logits as model_logits
    mean_probs = None
    for params in ensemble.members:
        probs = softmax(model_logits(Model(ensemble.arch, params), X))
        mean_probs = probs if mean_probs is None else mean_probs + probs
    return np.argmax(mean_probs, axis=1)


def ensemble_predict(ensemble: Ensemble, x: np.ndarray) -> int:
    """Argmax of the mean softmax probabilities; ties go to the lower class."""
    return int(ensemble_predict_batch(ensemble, np.asarray(x)[None, :])[0])


# ---------------------------------------------------------------------------
# Dead-neuron probe (ReLU)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeadNeuronReport:
    dead_counts: tuple[int, ...]
    layer_widths: tuple[int, ...]
    dead_layers: tuple[bool, ...]
    n_probed: int

    @property
    def any_dead_layer(self) -> bool:
        return any(self.dead_layers)


def dead_neuron_report(model: Model, dataset: Dataset, budget: AdvBudget,
                       attack_cfg: PgdConfig, stream: RngStream) -> DeadNeuronReport:
    """A unit is dead when its pre-activation stays <= 0 on every training
    input and every attacked input probed; a layer is dead when all its units
    are."""
    arch = model.arch
    if not isinstance(arch, Mlp) or arch.activation != "relu":
        raise ValueError("dead-neuron probe applies to relu MLPs")
    probes = [dataset.inputs]
    if budget.eps > 0:
        probes.append(pgd_batch(model, dataset.inputs, dataset.labels, budget,
                                attack_cfg, stream.child("dead-probe")))
    max_pre = None
    n_probed = 0
    for X in probes:
        zs, _ = _mlp_forward(arch, model.params, X)
        hidden = [z.max(axis=0) for z in zs[:-1]]
        if max_pre is None:
            max_pre = hidden
        else:
            max_pre = [np.maximum(a, b) for a, b in zip(max_pre, hidden)]
        n_probed += X.shape[0]
    dead_counts = tuple(int(np.sum(mx <= 0.0)) for mx in max_pre)
    widths = tuple(mx.size for mx in max_pre)
    dead_layers = tuple(c == w for c, w in zip(dead_counts, widths))
    return DeadNeuronReport(dead_counts, widths, dead_layers, n_probed)
