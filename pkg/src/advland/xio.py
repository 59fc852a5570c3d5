"""CLI, configuration, dataset ingestion (MNIST IDX), checkpoint persistence,
task dispatch and manifests.

Config files are INI-style key/value sections; unknown sections or keys are
hard errors. Every run writes a manifest echoing the config text and the
SHA-256 of each output file, so identical configs reproduce byte-identical
artifacts.
"""

import os

if "ADVLAND_THREADS" in os.environ:
    # Must happen before numpy is first imported to take effect.
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["ADVLAND_THREADS"])

import argparse
import hashlib
import json
import struct
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import connect as connect_mod
from . import probe as probe_mod
from . import theory as theory_mod
from .attack import AdvBudget, PgdConfig, pgd_batch, robust_error
from .core import (
    BinaryLogistic, Dataset, LinearMulticlass, Mlp, Model, ParamVector,
    init_model, make_blobs, make_image_task, per_example_loss, predict,
)
from .rng import RngStream
from .schedule import (
    EpsScheduler, LrSchedule, PeriodPlan, constant_eps, eps_at, lr_at,
    single_period,
)
from .train import (
    final_robust_error, sgd, adam, telemetry_csv, train_adversarial,
)

CSV_VERSION = "advland-v1"

TASKS = ("train", "attack", "eval", "hessian", "landscape", "similarity",
         "connect", "theory", "schedule")

_SCHEMA = {
    "run": {"task", "seed", "out"},
    "model": {"arch", "widths", "activation", "m", "k", "init_scale", "checkpoint"},
    "data": {"source", "n", "n_test", "m", "k", "margin", "side", "noise",
             "density", "distinct", "flip_prob", "seed", "images", "labels",
             "test_images", "test_labels", "num_classes"},
    "budget": {"p", "eps", "clip"},
    "attack": {"steps", "step_size", "random_start", "restarts"},
    "schedule": {"kind", "eps_min", "eps_max", "warmup"},
    "lr": {"kind", "base", "boundaries", "divisor", "end_value", "segment"},
    "optimizer": {"kind", "momentum", "weight_decay"},
    "train": {"epochs", "batch_size", "periods"},
    "hessian": {"k", "tol", "max_iters", "fd_radius", "normalize", "n_norm_samples",
                "probe_n"},
    "landscape": {"half_width", "resolution"},
    "similarity": {"a_values", "repeats", "probe_n"},
    "connect": {"checkpoint_a", "checkpoint_b", "order", "steps", "curve_lr",
                "resolution", "batch_size"},
    "theory": {"instances", "nesting_instances"},
}


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending key."""


class IdxFormatError(ValueError):
    """Malformed IDX file; the message names the byte offset."""


class CheckpointError(ValueError):
    """Malformed or incompatible checkpoint file."""


# ---------------------------------------------------------------------------
# RunConfig
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    task: str
    seed: int
    out: str
    raw: str
    sections: tuple

    def _section(self, name):
        for sec, items in self.sections:
            if sec == name:
                return dict(items)
        return {}

    def get(self, section, key, default=None, cast=str):
        items = self._section(section)
        if key not in items:
            if default is None:
                raise ConfigError(f"missing required key '{section}.{key}'")
            return default
        value = items[key]
        if cast is bool:
            if value.lower() in ("true", "yes", "1"):
                return True
            if value.lower() in ("false", "no", "0"):
                return False
            raise ConfigError(f"key '{section}.{key}' is not a boolean: {value!r}")
        try:
            return cast(value)
        except ValueError as exc:
            raise ConfigError(f"key '{section}.{key}' has invalid value {value!r}") from exc

    def get_optional(self, section, key, cast=str):
        items = self._section(section)
        if key not in items or items[key] == "":
            return None
        return self.get(section, key, cast=cast)

    def int_list(self, section, key, default=()):
        raw = self.get_optional(section, key)
        if raw is None:
            return tuple(default)
        return tuple(int(v) for v in raw.split(",") if v.strip())

    def float_list(self, section, key, default=()):
        raw = self.get_optional(section, key)
        if raw is None:
            return tuple(default)
        return tuple(float(v) for v in raw.split(",") if v.strip())


def parse_config(text: str, task_override: str | None = None,
                 seed_override: int | None = None,
                 out_override: str | None = None) -> RunConfig:
    """Parse and validate the key/value config document."""
    import configparser

    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc

    sections = []
    for sec in parser.sections():
        if sec not in _SCHEMA:
            raise ConfigError(f"unknown section '{sec}'")
        items = []
        for key, value in parser.items(sec):
            if key not in _SCHEMA[sec]:
                raise ConfigError(f"unknown key '{sec}.{key}'")
            items.append((key, value))
        sections.append((sec, tuple(sorted(items))))
    sections = tuple(sorted(sections))

    def peek(section, key, default=None):
        for sec, items in sections:
            if sec == section:
                for k, v in items:
                    if k == key:
                        return v
        return default

    task = task_override or peek("run", "task")
    if task is None:
        raise ConfigError("no task given (run.task or command line)")
    if task not in TASKS:
        raise ConfigError(f"unknown task '{task}'")
    cfg_task = peek("run", "task")
    if task_override and cfg_task and cfg_task != task_override:
        raise ConfigError(f"config task '{cfg_task}' conflicts with command '{task_override}'")
    seed = seed_override if seed_override is not None else int(peek("run", "seed", "0"))
    out = out_override or peek("run", "out", "runs/out")
    return RunConfig(task, seed, out, text, sections)


# ---------------------------------------------------------------------------
# IDX files
# ---------------------------------------------------------------------------

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


def _read_u32_be(data: bytes, offset: int, path) -> int:
    if len(data) < offset + 4:
        raise IdxFormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">I", data, offset)[0]


def parse_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """MNIST-style IDX pair -> Dataset with pixels scaled to [0, 1] by /255."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    img = images_path.read_bytes()
    magic = _read_u32_be(img, 0, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise IdxFormatError(
            f"{images_path}: wrong magic 0x{magic:08x} at offset 0 (want 0x{IDX_IMAGES_MAGIC:08x})")
    n = _read_u32_be(img, 4, images_path)
    rows = _read_u32_be(img, 8, images_path)
    cols = _read_u32_be(img, 12, images_path)
    expected = 16 + n * rows * cols
    if len(img) != expected:
        raise IdxFormatError(
            f"{images_path}: expected {expected} bytes, got {len(img)} "
            f"(pixel data at offset 16)")
    pixels = np.frombuffer(img, dtype=np.uint8, offset=16).reshape(n, rows * cols)

    lab = labels_path.read_bytes()
    magic = _read_u32_be(lab, 0, labels_path)
    if magic != IDX_LABELS_MAGIC:
        raise IdxFormatError(
            f"{labels_path}: wrong magic 0x{magic:08x} at offset 0 (want 0x{IDX_LABELS_MAGIC:08x})")
    n_lab = _read_u32_be(lab, 4, labels_path)
    if len(lab) != 8 + n_lab:
        raise IdxFormatError(
            f"{labels_path}: expected {8 + n_lab} bytes, got {len(lab)} "
            f"(label data at offset 8)")
    if n_lab != n:
        raise IdxFormatError(
            f"count mismatch: {n} images in {images_path} vs {n_lab} labels in {labels_path}")
    labels = np.frombuffer(lab, dtype=np.uint8, offset=8).astype(np.int64)
    if num_classes is None:
        num_classes = int(labels.max()) + 1 if n else 1
    return Dataset(pixels.astype(np.float64) / 255.0, labels,
                   num_classes=num_classes, domain=(0.0, 1.0))


def write_idx(images_path, labels_path, dataset: Dataset, side: int) -> None:
    """Inverse of parse_idx for [0,1]-quantized image datasets."""
    n = dataset.n
    if side * side != dataset.dim:
        raise ValueError("side^2 must equal the input dimension")
    pixels = np.round(dataset.inputs * 255.0).astype(np.uint8)
    with open(images_path, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, side, side))
        fh.write(pixels.tobytes())
    with open(labels_path, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, n))
        fh.write(dataset.labels.astype(np.uint8).tobytes())


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ALLB0001"


def _arch_header(arch) -> list[str]:
    if isinstance(arch, LinearMulticlass):
        return ["arch: linear", f"m: {arch.m}", f"k: {arch.k}"]
    if isinstance(arch, BinaryLogistic):
        return ["arch: logistic", f"m: {arch.m}"]
    widths = ",".join(str(w) for w in arch.widths)
    return ["arch: mlp", f"widths: {widths}", f"activation: {arch.activation}"]


def _arch_from_header(fields: dict):
    kind = fields["arch"]
    if kind == "linear":
        return LinearMulticlass(int(fields["m"]), int(fields["k"]))
    if kind == "logistic":
        return BinaryLogistic(int(fields["m"]))
    if kind == "mlp":
        widths = tuple(int(w) for w in fields["widths"].split(","))
        return Mlp(widths, fields["activation"])
    raise CheckpointError(f"unknown arch kind {kind!r} in checkpoint header")


def save_checkpoint(path, model: Model, seed: int = 0, epoch: int = 0,
                    eps: float = 0.0) -> None:
    """Binary format: magic, u32-LE header length, UTF-8 header, raw LE f64
    parameters in layout order. Round-trips bitwise."""
    layout = ",".join(f"{name}:{'x'.join(str(s) for s in shape)}"
                      for name, shape in model.params.layout)
    lines = _arch_header(model.arch) + [
        f"layout: {layout}", "dtype: f64", f"seed: {seed}", f"epoch: {epoch}",
        f"eps: {eps!r}",
    ]
    header = ("\n".join(lines) + "\n").encode("utf-8")
    payload = model.params.values.astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)


def load_checkpoint(path):
    """Returns (Model, metadata dict)."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC[:4]:
        raise CheckpointError(f"{path}: not an advland checkpoint (bad magic at offset 0)")
    if data[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {data[4:8].decode('ascii', 'replace')!r}")
    header_len = struct.unpack_from("<I", data, 8)[0]
    if len(data) < 12 + header_len:
        raise CheckpointError(f"{path}: truncated header (wants {header_len} bytes)")
    fields = {}
    for line in data[12:12 + header_len].decode("utf-8").splitlines():
        if line.strip():
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
    if fields.get("dtype") != "f64":
        raise CheckpointError(f"{path}: unsupported dtype {fields.get('dtype')!r}")
    arch = _arch_from_header(fields)
    layout = arch.param_layout()
    n_params = sum(int(np.prod(s)) for _, s in layout)
    payload = data[12 + header_len:]
    if len(payload) != 8 * n_params:
        raise CheckpointError(
            f"{path}: payload has {len(payload)} bytes, expected {8 * n_params}")
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    meta = {"seed": int(fields.get("seed", 0)), "epoch": int(fields.get("epoch", 0)),
            "eps": float(fields.get("eps", 0.0))}
    return Model(arch, ParamVector(values, layout)), meta


# ---------------------------------------------------------------------------
# Builders shared by tasks
# ---------------------------------------------------------------------------

def _build_budget(cfg: RunConfig) -> AdvBudget:
    p = cfg.get("budget", "p", default="inf")
    eps = cfg.get("budget", "eps", default=0.0, cast=float)
    clip_raw = cfg.get_optional("budget", "clip")
    clip = None
    if clip_raw is not None and clip_raw.lower() != "none":
        lo, hi = (float(v) for v in clip_raw.split(","))
        clip = (lo, hi)
    return AdvBudget(p, eps, domain_clip=clip)


def _build_attack(cfg: RunConfig, eps: float) -> PgdConfig:
    steps = cfg.get("attack", "steps", default=10, cast=int)
    step_size = cfg.get_optional("attack", "step_size", cast=float)
    if step_size is None:
        step_size = max(eps / 4.0, 1e-6)
    return PgdConfig(steps=steps, step_size=step_size,
                     random_start=cfg.get("attack", "random_start", default=True, cast=bool),
                     restarts=cfg.get("attack", "restarts", default=1, cast=int))


def _build_dataset(cfg: RunConfig, which: str = "train") -> Dataset:
    source = cfg.get("data", "source", default="blobs")
    seed = cfg.get("data", "seed", default=cfg.seed, cast=int)
    # Test splits resample the SAME task (same centers/prototypes).
    sample_seed = seed + 1000003 if which == "test" else None
    if source == "blobs":
        n = cfg.get("data", "n_test" if which == "test" else "n",
                    default=200 if which == "test" else 1000, cast=int)
        return make_blobs(seed, n, cfg.get("data", "m", default=8, cast=int),
                          cfg.get("data", "k", default=3, cast=int),
                          cfg.get("data", "margin", default=0.5, cast=float),
                          sample_seed=sample_seed)
    if source == "images":
        n = cfg.get("data", "n_test" if which == "test" else "n",
                    default=200 if which == "test" else 1000, cast=int)
        return make_image_task(seed, n, side=cfg.get("data", "side", default=28, cast=int),
                               num_classes=cfg.get("data", "k", default=10, cast=int),
                               noise=cfg.get("data", "noise", default=0.08, cast=float),
                               density=cfg.get("data", "density", default=0.25, cast=float),
                               distinct=cfg.get("data", "distinct", default=40, cast=int),
                               flip_prob=cfg.get("data", "flip_prob", default=0.06, cast=float),
                               sample_seed=sample_seed)
    if source == "idx":
        prefix = "test_" if which == "test" else ""
        images = cfg.get("data", prefix + "images")
        labels = cfg.get("data", prefix + "labels")
        ds = parse_idx(images, labels,
                       num_classes=cfg.get_optional("data", "num_classes", cast=int))
        n = cfg.get_optional("data", "n_test" if which == "test" else "n", cast=int)
        if n is not None and n < ds.n:
            ds = ds.take(np.arange(n))
        return ds
    raise ConfigError(f"unknown data source '{source}'")


def _build_model(cfg: RunConfig, dataset: Dataset, stream: RngStream) -> Model:
    ckpt = cfg.get_optional("model", "checkpoint")
    if ckpt is not None:
        model, _ = load_checkpoint(ckpt)
        if model.arch.input_dim != dataset.dim:
            raise ConfigError(
                f"checkpoint expects {model.arch.input_dim} inputs, data has {dataset.dim}")
        return model
    arch_kind = cfg.get("model", "arch", default="mlp")
    if arch_kind == "linear":
        arch = LinearMulticlass(cfg.get("model", "m", default=dataset.dim, cast=int),
                                cfg.get("model", "k", default=dataset.num_classes, cast=int))
    elif arch_kind == "logistic":
        arch = BinaryLogistic(cfg.get("model", "m", default=dataset.dim, cast=int))
    elif arch_kind == "mlp":
        widths = cfg.int_list("model", "widths",
                              default=(dataset.dim, 64, dataset.num_classes))
        arch = Mlp(widths, cfg.get("model", "activation", default="relu"))
    else:
        raise ConfigError(f"unknown model arch '{arch_kind}'")
    scale = cfg.get("model", "init_scale", default=1.0, cast=float)
    return init_model(arch, stream.child("init").generator(), scale=scale)


def _build_eps_sched(cfg: RunConfig, eps_target: float) -> EpsScheduler:
    kind = cfg.get("schedule", "kind", default="constant")
    if kind == "constant":
        return constant_eps(eps_target)
    return EpsScheduler(kind, eps_target,
                        cfg.get("schedule", "eps_min", default=0.0, cast=float),
                        cfg.get("schedule", "eps_max", default=2 * eps_target, cast=float),
                        cfg.get("schedule", "warmup", default=10, cast=int))


def _build_lr_sched(cfg: RunConfig) -> LrSchedule:
    kind = cfg.get("lr", "kind", default="constant")
    base = cfg.get("lr", "base", default=1e-4, cast=float)
    if kind == "constant":
        return LrSchedule("constant", base)
    if kind == "step":
        return LrSchedule("step", base, boundaries=cfg.int_list("lr", "boundaries"),
                          divisor=cfg.get("lr", "divisor", default=10.0, cast=float))
    seg = cfg.int_list("lr", "segment", default=(0, 1))
    return LrSchedule("exp_segment", base,
                      end_value=cfg.get("lr", "end_value", default=base / 10, cast=float),
                      segment=(seg[0], seg[1]))


def _build_optimizer(cfg: RunConfig):
    kind = cfg.get("optimizer", "kind", default="adam")
    if kind == "adam":
        return adam()
    if kind == "sgd":
        return sgd(momentum=cfg.get("optimizer", "momentum", default=0.9, cast=float))
    raise ConfigError(f"unknown optimizer kind '{kind}'")


def _periods(cfg: RunConfig, epochs: int) -> PeriodPlan:
    bounds = cfg.int_list("train", "periods")
    if not bounds:
        return single_period(epochs)
    return PeriodPlan(bounds)


def _csv_head(task: str, columns: str) -> str:
    return f"# {CSV_VERSION} {task}\n{columns}\n"


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

def _task_schedule(cfg: RunConfig, out: Path) -> list[str]:
    epochs = cfg.get("train", "epochs", default=20, cast=int)
    periods = _periods(cfg, epochs)
    budget = _build_budget(cfg)
    eps_sched = _build_eps_sched(cfg, budget.eps)
    lr_sched = _build_lr_sched(cfg)
    rows = []
    for d in range(epochs):
        period = periods.period_of(d)
        e = eps_at(eps_sched, d, period, nominal=periods.total_epochs)
        lr = lr_at(lr_sched, d, period, nominal=periods.total_epochs)
        rows.append(f"{d},{e!r},{lr!r}")
    (out / "schedule.csv").write_text(
        _csv_head("schedule", "epoch,eps,lr") + "\n".join(rows) + "\n")
    return ["schedule.csv"]


def _task_train(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "train-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    epochs = cfg.get("train", "epochs", default=20, cast=int)
    periods = _periods(cfg, epochs)
    attack_cfg = _build_attack(cfg, budget.eps)
    result = train_adversarial(
        model, dataset, eps_sched=_build_eps_sched(cfg, budget.eps),
        lr_sched=_build_lr_sched(cfg), optimizer=_build_optimizer(cfg),
        attack_cfg=attack_cfg, epochs=epochs,
        batch_size=cfg.get("train", "batch_size", default=128, cast=int),
        stream=stream.child("loop"), budget=budget, periods=periods,
        weight_decay=cfg.get("optimizer", "weight_decay", default=0.0, cast=float))

    files = []
    (out / "telemetry.csv").write_text(
        f"# {CSV_VERSION} train\n" + telemetry_csv(result.telemetry))
    files.append("telemetry.csv")
    save_checkpoint(out / "final.ckpt", result.model, seed=cfg.seed,
                    epoch=epochs, eps=budget.eps)
    files.append("final.ckpt")
    for epoch, params in result.snapshots:
        name = f"snapshot-{epoch:04d}.ckpt"
        save_checkpoint(out / name, Model(model.arch, params), seed=cfg.seed,
                        epoch=epoch, eps=budget.eps)
        files.append(name)

    test_ds = _build_dataset(cfg, "test")
    err = final_robust_error(result, test_ds, budget, attack_cfg,
                             stream.child("final-eval"))
    summary = {
        "diverged": result.diverged,
        "epochs_completed": (result.telemetry[-1].epoch + 1) if result.telemetry else 0,
        "final_loss": result.telemetry[-1].loss if result.telemetry else None,
        "robust_test_error": err,
        "snapshots": len(result.snapshots),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    files.append("summary.json")
    return files


def _task_attack(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "attack-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    attack_cfg = _build_attack(cfg, budget.eps)
    adv = pgd_batch(model, dataset.inputs, dataset.labels, budget, attack_cfg,
                    stream.child("pgd"))
    clean_losses = per_example_loss(model, dataset.inputs, dataset.labels)
    adv_losses = per_example_loss(model, adv, dataset.labels)
    clean_pred = predict(model, dataset.inputs)
    adv_pred = predict(model, adv)
    rows = []
    for i in range(dataset.n):
        linf = float(np.max(np.abs(adv[i] - dataset.inputs[i])))
        rows.append(f"{i},{dataset.labels[i]},{float(clean_losses[i])!r},"
                    f"{float(adv_losses[i])!r},{linf!r},"
                    f"{int(clean_pred[i] == dataset.labels[i])},"
                    f"{int(adv_pred[i] == dataset.labels[i])}")
    (out / "attack_report.csv").write_text(
        _csv_head("attack", "index,label,clean_loss,adv_loss,linf,clean_correct,adv_correct")
        + "\n".join(rows) + "\n")
    return ["attack_report.csv"]


def _task_eval(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "eval-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    attack_cfg = _build_attack(cfg, budget.eps)
    clean = float(np.mean(predict(model, dataset.inputs) != dataset.labels))
    robust = robust_error(model, dataset, budget, attack_cfg, stream.child("pgd"))
    payload = {"clean_error": clean, "robust_error": robust, "eps": budget.eps,
               "n": dataset.n}
    (out / "eval.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return ["eval.json"]


def _hessian_report(cfg: RunConfig, model: Model, dataset: Dataset,
                    budget: AdvBudget, stream: RngStream):
    attack_cfg = _build_attack(cfg, budget.eps)
    probe_n = cfg.get_optional("hessian", "probe_n", cast=int)
    if probe_n is not None and probe_n < dataset.n:
        dataset = dataset.take(np.arange(probe_n))
    matvec = probe_mod.hessian_matvec(
        model, dataset, budget, attack_cfg, stream.child("hvp"),
        radius=cfg.get("hessian", "fd_radius", default=1e-3, cast=float))
    report = probe_mod.top_eigenpairs(
        matvec, model.params.size, cfg.get("hessian", "k", default=5, cast=int),
        tol=cfg.get("hessian", "tol", default=1e-6, cast=float),
        max_iters=cfg.get("hessian", "max_iters", default=200, cast=int),
        stream=stream.child("power"), layout=model.params.layout)
    if cfg.get("hessian", "normalize", default=True, cast=bool):
        const = probe_mod.normalization_constant(
            model.arch, dataset, budget, attack_cfg, stream.child("norm"),
            n_samples=cfg.get("hessian", "n_norm_samples", default=10, cast=int))
        report = report.with_normalization(const)
    return report, dataset, attack_cfg


def _task_hessian(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "hessian-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    report, _, _ = _hessian_report(cfg, model, dataset, budget, stream)
    (out / "eigen.json").write_text(report.to_json() + "\n")
    return ["eigen.json"]


def _task_landscape(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "landscape-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    report, probe_ds, attack_cfg = _hessian_report(cfg, model, dataset, budget, stream)
    v1 = report.eigenvectors[0]
    v2 = report.eigenvectors[1]
    v2 = v2 - np.dot(v1, v2) * v1
    v2 /= np.linalg.norm(v2)
    loss_fn = probe_mod.adversarial_loss_fn(model, probe_ds, budget, attack_cfg,
                                            stream.child("grid"))
    grid = probe_mod.landscape_grid(
        loss_fn, model.params.values, v1, v2,
        half_width=cfg.get("landscape", "half_width", default=0.5, cast=float),
        resolution=cfg.get("landscape", "resolution", default=9, cast=int))
    (out / "landscape.csv").write_text(f"# {CSV_VERSION} landscape\n" + grid.to_csv())
    return ["landscape.csv"]


def _task_similarity(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "similarity-task")
    dataset = _build_dataset(cfg, "train")
    model = _build_model(cfg, dataset, stream)
    budget = _build_budget(cfg)
    report, probe_ds, attack_cfg = _hessian_report(cfg, model, dataset, budget, stream)
    top_vec = report.eigenvectors[0]
    rnd = stream.child("random-dir").generator().normal(size=model.params.size)
    rnd /= np.linalg.norm(rnd)
    test_ds = _build_dataset(cfg, "test")
    rows = []
    for name, v in (("eigen", top_vec), ("random", rnd)):
        for a in cfg.float_list("similarity", "a_values", default=(0.1,)):
            rep = probe_mod.perturb_similarity(
                model, probe_ds, v, a, budget, attack_cfg,
                stream.child(f"sim-{name}-{a}"),
                repeats=cfg.get("similarity", "repeats", default=4, cast=int),
                test_dataset=test_ds)
            rows.append(f"{name},{a!r},{rep.similarity!r},{rep.repeat_variance!r},"
                        f"{rep.n_excluded},{rep.robust_err_plus!r},{rep.robust_err_minus!r},"
                        f"{rep.test_err_plus!r},{rep.test_err_minus!r}")
    (out / "similarity.csv").write_text(
        _csv_head("similarity",
                  "direction,a,similarity,variance,excluded,train_err_plus,"
                  "train_err_minus,test_err_plus,test_err_minus")
        + "\n".join(rows) + "\n")
    return ["similarity.csv"]


def _task_connect(cfg: RunConfig, out: Path) -> list[str]:
    stream = RngStream(cfg.seed, "connect-task")
    dataset = _build_dataset(cfg, "train")
    test_ds = _build_dataset(cfg, "test")
    model_a, _ = load_checkpoint(cfg.get("connect", "checkpoint_a"))
    model_b, _ = load_checkpoint(cfg.get("connect", "checkpoint_b"))
    budget = _build_budget(cfg)
    attack_cfg = _build_attack(cfg, budget.eps)
    order = cfg.get("connect", "order", default=2, cast=int)
    resolution = cfg.get("connect", "resolution", default=11, cast=int)
    curve = connect_mod.make_curve(model_a, model_b, order)
    segment_eval = connect_mod.eval_curve(curve, dataset, test_ds, budget,
                                          attack_cfg, resolution, stream.child("seg"))
    trained = connect_mod.train_curve(
        curve, dataset, budget, attack_cfg, _build_optimizer(cfg),
        steps=cfg.get("connect", "steps", default=200, cast=int),
        lr=cfg.get("connect", "curve_lr", default=0.01, cast=float),
        stream=stream.child("curve-train"),
        batch_size=cfg.get("connect", "batch_size", default=128, cast=int))
    trained_eval = connect_mod.eval_curve(trained, dataset, test_ds, budget,
                                          attack_cfg, resolution, stream.child("eval"))
    (out / "curve.csv").write_text(f"# {CSV_VERSION} connect\n" + trained_eval.to_csv())
    payload = {"barrier_trained": trained_eval.barrier,
               "barrier_segment": segment_eval.barrier,
               "order": order, "eps": budget.eps}
    (out / "connect.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return ["curve.csv", "connect.json"]


def _task_theory(cfg: RunConfig, out: Path) -> list[str]:
    report = theory_suite(cfg.seed,
                          instances=cfg.get("theory", "instances", default=100, cast=int),
                          nesting_instances=cfg.get("theory", "nesting_instances",
                                                    default=1000, cast=int))
    (out / "theory_report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True) + "\n")
    return ["theory_report.json"]


def theory_suite(seed: int, instances: int = 100, nesting_instances: int = 1000) -> dict:
    """Property suite behind the `theory` task: one pass/fail block per result."""
    rng = np.random.default_rng(seed)

    nesting_violations = 0
    eps_grid = (0.05, 0.1, 0.25, 0.5, 1.0)
    for _ in range(nesting_instances):
        W = rng.normal(size=(3, 4))
        x = rng.normal(size=4)
        y = int(rng.integers(0, 3))
        members = [theory_mod.version_space_member(W, x, y, e) for e in eps_grid]
        if any((not small) and big for small, big in zip(members, members[1:])):
            nesting_violations += 1

    thr_failures = 0
    bound_failures = 0
    gammas = theory_mod.DEFAULT_GAMMA_GRID
    for _ in range(instances):
        k = int(rng.choice([3, 5]))
        m = int(rng.integers(2, 9))
        W = rng.normal(size=(k, m))
        x = rng.normal(size=m)
        y = int(rng.integers(0, k))
        thr = max(max(theory_mod.eps_bar(g * W, x, y),
                      theory_mod.eps_bar(-g * W, x, y)) for g in gammas)
        eps = max(thr, 0.0) + 1e-6
        if not theory_mod.t_set_member(W, x, y, eps, gammas=gammas):
            thr_failures += 1
        bar = theory_mod.eps_bar(W, x, y)
        if theory_mod.g_lower_bound(W, x, y, bar + 1e-6) < np.log(k) - 1e-9:
            bound_failures += 1

    pair = np.zeros((2, 4))
    pair[0, 0] = 1.0
    pair[1, 0] = -1.0
    prob = theory_mod.LogisticProblem(pair, np.array([1.0, -1.0]), p="inf")
    w = np.array([1.0, 0.0, 0.0, 0.0])
    mono = theory_mod.eig_monotonicity_check(prob, w, [0.0, 0.25, 0.5, 0.75, 1.0])

    return {
        "prop1_nesting": {"instances": nesting_instances,
                          "violations": nesting_violations,
                          "passed": nesting_violations == 0},
        "thm1_threshold": {"instances": instances, "failures": thr_failures,
                           "passed": thr_failures == 0},
        "eps_bar_lower_bound": {"instances": instances, "failures": bound_failures,
                                "passed": bound_failures == 0},
        "thm3_monotonicity": {"lam_max": list(mono.lam_max),
                              "lam_min": list(mono.lam_min),
                              "passed": mono.passed},
        "passed": (nesting_violations == 0 and thr_failures == 0
                   and bound_failures == 0 and mono.passed),
    }


_DISPATCH = {
    "schedule": _task_schedule,
    "train": _task_train,
    "attack": _task_attack,
    "eval": _task_eval,
    "hessian": _task_hessian,
    "landscape": _task_landscape,
    "similarity": _task_similarity,
    "connect": _task_connect,
    "theory": _task_theory,
}


def run(cfg: RunConfig) -> dict:
    """Execute the configured task; returns the manifest written to disk."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    files = _DISPATCH[cfg.task](cfg, out)
    outputs = {}
    for name in sorted(files):
        digest = hashlib.sha256((out / name).read_bytes()).hexdigest()
        outputs[name] = digest
    manifest = {"task": cfg.task, "seed": cfg.seed, "config": cfg.raw,
                "outputs": outputs}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="advland",
        description="Desk-scale laboratory for the adversarial-training loss landscape.")
    parser.add_argument("task", choices=TASKS)
    parser.add_argument("--config", required=True, help="path to the run config")
    parser.add_argument("--seed", type=int, default=None, help="override run.seed")
    parser.add_argument("--out", default=None, help="override run.out")
    args = parser.parse_args(argv)
    try:
        text = Path(args.config).read_text()
        cfg = parse_config(text, task_override=args.task, seed_override=args.seed,
                           out_override=args.out)
        manifest = run(cfg)
    except ConfigError as exc:
        print(json.dumps({"error": "ConfigError", "message": str(exc)}),
              file=sys.stderr)
        return 2
    except (IdxFormatError, CheckpointError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1
    print(json.dumps({"task": cfg.task, "out": cfg.out,
                      "outputs": sorted(manifest["outputs"])}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
