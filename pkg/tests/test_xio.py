import json
import struct

import numpy as np
import pytest

from advland.core import Mlp, init_model, make_image_task
from advland.xio import (
    CheckpointError, ConfigError, IdxFormatError, parse_config, parse_idx,
    load_checkpoint, main, run, save_checkpoint, theory_suite, write_idx,
)


# ---------------------------------------------------------------------------
# IDX parsing
# ---------------------------------------------------------------------------

def idx_fixture(tmp_path, pixels, labels, rows, cols):
    n = len(labels)
    img = tmp_path / "images.idx"
    lab = tmp_path / "labels.idx"
    img.write_bytes(struct.pack(">IIII", 0x803, n, rows, cols) + bytes(pixels))
    lab.write_bytes(struct.pack(">II", 0x801, n) + bytes(labels))
    return img, lab


def test_idx_single_zero_image(tmp_path):
    img, lab = idx_fixture(tmp_path, [0, 0, 0, 0], [7], rows=2, cols=2)
    ds = parse_idx(img, lab)
    assert ds.n == 1 and ds.dim == 4
    assert np.all(ds.inputs == 0.0)
    assert ds.labels[0] == 7


def test_idx_pixel_255_is_exactly_one(tmp_path):
    img, lab = idx_fixture(tmp_path, [255, 128, 0, 51], [3], rows=2, cols=2)
    ds = parse_idx(img, lab)
    assert ds.inputs[0, 0] == 1.0
    assert ds.inputs[0, 3] == pytest.approx(51 / 255)


def test_idx_swapped_magics_rejected(tmp_path):
    img = tmp_path / "images.idx"
    lab = tmp_path / "labels.idx"
    img.write_bytes(struct.pack(">IIII", 0x801, 1, 2, 2) + bytes(4))
    lab.write_bytes(struct.pack(">II", 0x803, 1) + bytes(1))
    with pytest.raises(IdxFormatError, match="magic.*offset 0"):
        parse_idx(img, lab)


def test_idx_count_mismatch(tmp_path):
    img, _ = idx_fixture(tmp_path, [0, 0, 0, 0], [7], rows=2, cols=2)
    lab = tmp_path / "labels2.idx"
    lab.write_bytes(struct.pack(">II", 0x801, 2) + bytes(2))
    with pytest.raises(IdxFormatError, match="count mismatch"):
        parse_idx(img, lab)


def test_idx_truncated_rejected(tmp_path):
    img, lab = idx_fixture(tmp_path, [0, 0, 0, 0], [7], rows=2, cols=2)
    img.write_bytes(img.read_bytes()[:-1])
    with pytest.raises(IdxFormatError, match="expected"):
        parse_idx(img, lab)


def test_idx_rejects_every_header_byte_mutation(tmp_path):
    img, lab = idx_fixture(tmp_path, [1, 2, 3, 4], [7], rows=2, cols=2)
    original = img.read_bytes()
    for offset in range(16):
        mutated = bytearray(original)
        mutated[offset] = (mutated[offset] + 1) % 256
        img.write_bytes(bytes(mutated))
        with pytest.raises(IdxFormatError):
            parse_idx(img, lab)
    img.write_bytes(original)
    parse_idx(img, lab)  # canonical bytes still parse


def test_idx_roundtrip_of_image_task(tmp_path):
    ds = make_image_task(seed=5, n=30, side=6, num_classes=4)
    write_idx(tmp_path / "i.idx", tmp_path / "l.idx", ds, side=6)
    back = parse_idx(tmp_path / "i.idx", tmp_path / "l.idx")
    assert back.inputs.tobytes() == ds.inputs.tobytes()
    assert np.array_equal(back.labels, ds.labels)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def test_checkpoint_roundtrip_bitwise(tmp_path):
    model = init_model(Mlp((5, 7, 3), "elu"), np.random.default_rng(0))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, seed=9, epoch=4, eps=0.25)
    back, meta = load_checkpoint(path)
    assert back.params.values.tobytes() == model.params.values.tobytes()
    assert back.arch == model.arch
    assert meta == {"seed": 9, "epoch": 4, "eps": 0.25}


def test_checkpoint_truncated_payload(tmp_path):
    model = init_model(Mlp((3, 4, 2), "relu"), np.random.default_rng(1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="expected"):
        load_checkpoint(path)


def test_checkpoint_wrong_dtype(tmp_path):
    model = init_model(Mlp((3, 4, 2), "relu"), np.random.default_rng(1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    data = path.read_bytes().replace(b"dtype: f64", b"dtype: f32")
    path.write_bytes(data)
    with pytest.raises(CheckpointError, match="dtype"):
        load_checkpoint(path)


def test_checkpoint_version_and_magic_errors(tmp_path):
    model = init_model(Mlp((3, 4, 2), "relu"), np.random.default_rng(1))
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model)
    data = path.read_bytes()
    path.write_bytes(b"ALLB0002" + data[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(b"NOPE0001" + data[8:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


# ---------------------------------------------------------------------------
# Config parsing
# ---------------------------------------------------------------------------

GOOD_CONFIG = """
[run]
task = schedule
seed = 3
out = {out}

[budget]
p = inf
eps = 0.4

[schedule]
kind = cosine
eps_min = 0
eps_max = 0.6
warmup = 10

[lr]
kind = constant
base = 1e-4

[train]
epochs = 20
"""


def test_parse_config_roundtrip_equality(tmp_path):
    text = GOOD_CONFIG.format(out=tmp_path / "o")
    cfg = parse_config(text)
    again = parse_config(cfg.raw)
    assert cfg == again
    assert cfg.task == "schedule"
    assert cfg.seed == 3


def test_unknown_key_is_hard_error():
    with pytest.raises(ConfigError, match="run.tasks"):
        parse_config("[run]\ntasks = train\n")
    with pytest.raises(ConfigError, match="section 'magic'"):
        parse_config("[magic]\nx = 1\n")


def test_task_conflict_detected():
    with pytest.raises(ConfigError, match="conflicts"):
        parse_config("[run]\ntask = train\n", task_override="eval")


def test_overrides_apply(tmp_path):
    text = GOOD_CONFIG.format(out="ignored")
    cfg = parse_config(text, seed_override=99, out_override=str(tmp_path))
    assert cfg.seed == 99
    assert cfg.out == str(tmp_path)


def test_bad_bool_value():
    cfg = parse_config("[run]\ntask = train\n[attack]\nrandom_start = maybe\n")
    with pytest.raises(ConfigError, match="boolean"):
        cfg.get("attack", "random_start", default=True, cast=bool)


# ---------------------------------------------------------------------------
# Task runs
# ---------------------------------------------------------------------------

def test_schedule_task_matches_eps_at(tmp_path):
    from advland.schedule import cosine_eps, eps_at, single_period
    cfg = parse_config(GOOD_CONFIG.format(out=tmp_path / "a"))
    run(cfg)
    lines = (tmp_path / "a" / "schedule.csv").read_text().splitlines()
    assert lines[0] == "# advland-v1 schedule"
    assert lines[1] == "epoch,eps,lr"
    sched = cosine_eps(0.0, 0.6, 10, 0.4)
    periods = single_period(20)
    for row in lines[2:]:
        d, e, lr = row.split(",")
        want = eps_at(sched, int(d), periods.period_of(int(d)), nominal=20)
        assert float(e) == pytest.approx(want, rel=1e-15)
        assert float(lr) == 1e-4


def test_full_run_determinism(tmp_path):
    text = GOOD_CONFIG.format(out="placeholder")
    cfg_a = parse_config(text, out_override=str(tmp_path / "a"))
    cfg_b = parse_config(text, out_override=str(tmp_path / "b"))
    run(cfg_a)
    run(cfg_b)
    for name in ("schedule.csv", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


TRAIN_CONFIG = """
[run]
task = train
seed = 5

[model]
arch = logistic

[data]
source = blobs
n = 64
n_test = 32
m = 4
k = 2
margin = 0.5

[budget]
p = inf
eps = 0.1

[attack]
steps = 4
step_size = 0.04

[schedule]
kind = constant

[lr]
kind = constant
base = 0.2

[optimizer]
kind = sgd
momentum = 0.9

[train]
epochs = 4
batch_size = 32
periods = 2,4
"""


def test_train_task_end_to_end(tmp_path):
    cfg = parse_config(TRAIN_CONFIG, out_override=str(tmp_path / "run1"))
    manifest = run(cfg)
    out = tmp_path / "run1"
    names = set(manifest["outputs"])
    assert {"telemetry.csv", "final.ckpt", "summary.json",
            "snapshot-0001.ckpt", "snapshot-0003.ckpt"} <= names
    telemetry = (out / "telemetry.csv").read_text().splitlines()
    assert telemetry[0] == "# advland-v1 train"
    assert telemetry[1] == "batch,epoch,grad_norm,robust_err,dist_init,loss,eps,lr"
    summary = json.loads((out / "summary.json").read_text())
    assert summary["diverged"] is False
    assert summary["snapshots"] == 2
    assert 0.0 <= summary["robust_test_error"] <= 1.0

    # Byte-identical rerun, including checkpoints.
    cfg2 = parse_config(TRAIN_CONFIG, out_override=str(tmp_path / "run2"))
    run(cfg2)
    for name in sorted(names):
        assert (out / name).read_bytes() == (tmp_path / "run2" / name).read_bytes(), name

    # Evaluate the produced checkpoint through the eval task.
    eval_config = f"""
[run]
task = eval
seed = 5

[model]
checkpoint = {out / 'final.ckpt'}

[data]
source = blobs
n = 32
m = 4
k = 2
margin = 0.5

[budget]
p = inf
eps = 0.1

[attack]
steps = 4
step_size = 0.04
"""
    cfg3 = parse_config(eval_config, out_override=str(tmp_path / "eval"))
    run(cfg3)
    payload = json.loads((tmp_path / "eval" / "eval.json").read_text())
    assert 0.0 <= payload["robust_error"] <= 1.0
    assert payload["clean_error"] <= payload["robust_error"] + 1e-12


def test_theory_task_passes(tmp_path):
    report = theory_suite(seed=7, instances=25, nesting_instances=200)
    assert report["passed"] is True
    assert report["prop1_nesting"]["violations"] == 0
    cfg = parse_config("[run]\ntask = theory\n[theory]\ninstances = 10\n"
                       "nesting_instances = 50\n",
                       out_override=str(tmp_path / "th"))
    run(cfg)
    payload = json.loads((tmp_path / "th" / "theory_report.json").read_text())
    assert payload["passed"] is True


def test_cli_exit_codes(tmp_path):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\ntasks = oops\n")
    assert main(["schedule", "--config", str(bad)]) == 2

    good = tmp_path / "good.ini"
    good.write_text(GOOD_CONFIG.format(out=tmp_path / "cli-out"))
    assert main(["schedule", "--config", str(good)]) == 0
    assert (tmp_path / "cli-out" / "schedule.csv").exists()

    missing = tmp_path / "nope.ini"
    assert main(["schedule", "--config", str(missing)]) == 1
