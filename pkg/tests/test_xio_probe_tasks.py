"""End-to-end CLI dispatch for the probe-style tasks on tiny settings."""

import json

import pytest

from advland.xio import parse_config, run

BASE_DATA = """
[data]
source = blobs
n = 48
n_test = 24
m = 6
k = 3
margin = 0.4

[budget]
p = inf
eps = 0.15

[attack]
steps = 4
step_size = 0.05
"""

TRAIN_TMPL = """
[run]
task = train
seed = {seed}

[model]
arch = mlp
widths = 6,10,3
activation = tanh

[schedule]
kind = constant

[lr]
kind = constant
base = 0.05

[optimizer]
kind = sgd
momentum = 0.9

[train]
epochs = 6
batch_size = 24
""" + BASE_DATA


@pytest.fixture(scope="module")
def two_checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpts")
    paths = []
    for seed in (31, 32):
        cfg = parse_config(TRAIN_TMPL.format(seed=seed),
                           out_override=str(root / f"run-{seed}"))
        run(cfg)
        paths.append(root / f"run-{seed}" / "final.ckpt")
    return paths


def test_hessian_task(tmp_path, two_checkpoints):
    config = f"""
[run]
task = hessian
seed = 7

[model]
checkpoint = {two_checkpoints[0]}

[hessian]
k = 2
tol = 1e-4
max_iters = 40
probe_n = 32
n_norm_samples = 3
""" + BASE_DATA
    cfg = parse_config(config, out_override=str(tmp_path / "h"))
    run(cfg)
    payload = json.loads((tmp_path / "h" / "eigen.json").read_text())
    assert len(payload["eigenvalues"]) == 2
    assert payload["eigenvalues"][0] >= payload["eigenvalues"][1]
    assert payload["normalization"] > 0
    assert payload["normalized"][0] == pytest.approx(
        payload["eigenvalues"][0] / payload["normalization"])


def test_landscape_task(tmp_path, two_checkpoints):
    config = f"""
[run]
task = landscape
seed = 7

[model]
checkpoint = {two_checkpoints[0]}

[hessian]
k = 2
tol = 1e-4
max_iters = 30
probe_n = 24
normalize = false

[landscape]
half_width = 0.3
resolution = 3
""" + BASE_DATA
    cfg = parse_config(config, out_override=str(tmp_path / "l"))
    run(cfg)
    lines = (tmp_path / "l" / "landscape.csv").read_text().splitlines()
    assert lines[0] == "# advland-v1 landscape"
    assert lines[1] == "a1,a2,loss"
    assert len(lines) == 2 + 9


def test_similarity_task(tmp_path, two_checkpoints):
    config = f"""
[run]
task = similarity
seed = 7

[model]
checkpoint = {two_checkpoints[0]}

[hessian]
k = 1
tol = 1e-4
max_iters = 30
probe_n = 24
normalize = false

[similarity]
a_values = 0.0,0.2
repeats = 2
""" + BASE_DATA
    cfg = parse_config(config, out_override=str(tmp_path / "s"))
    run(cfg)
    lines = (tmp_path / "s" / "similarity.csv").read_text().splitlines()
    assert len(lines) == 2 + 4  # 2 directions x 2 radii
    for row in lines[2:]:
        fields = row.split(",")
        assert fields[0] in ("eigen", "random")
        assert -1.0 <= float(fields[2]) <= 1.0


def test_attack_task(tmp_path, two_checkpoints):
    config = f"""
[run]
task = attack
seed = 7

[model]
checkpoint = {two_checkpoints[0]}
""" + BASE_DATA
    cfg = parse_config(config, out_override=str(tmp_path / "a"))
    run(cfg)
    lines = (tmp_path / "a" / "attack_report.csv").read_text().splitlines()
    assert lines[0] == "# advland-v1 attack"
    assert lines[1] == "index,label,clean_loss,adv_loss,linf,clean_correct,adv_correct"
    assert len(lines) == 2 + 48
    for row in lines[2:]:
        fields = row.split(",")
        assert float(fields[4]) <= 0.15 + 1e-12      # within the budget
        assert float(fields[3]) >= float(fields[2]) - 1e-12  # adv loss >= clean


def test_connect_task(tmp_path, two_checkpoints):
    a, b = two_checkpoints
    config = f"""
[run]
task = connect
seed = 7

[optimizer]
kind = sgd
momentum = 0.9

[connect]
checkpoint_a = {a}
checkpoint_b = {b}
order = 2
steps = 30
curve_lr = 0.05
resolution = 5
batch_size = 24
""" + BASE_DATA
    cfg = parse_config(config, out_override=str(tmp_path / "c"))
    run(cfg)
    payload = json.loads((tmp_path / "c" / "connect.json").read_text())
    assert payload["order"] == 2
    assert payload["barrier_trained"] >= 0.0
    lines = (tmp_path / "c" / "curve.csv").read_text().splitlines()
    assert lines[1] == "t,train_loss,test_robust_error"
    assert len(lines) == 2 + 5
