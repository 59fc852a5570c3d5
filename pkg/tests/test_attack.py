import numpy as np
import pytest

from advland import core
from advland.attack import (
    AdvBudget, OracleBoundError, PgdConfig, bruteforce_adv_loss, fgsm,
    mnist_style_pgd, pgd, pgd_batch, robust_error,
)
from advland.core import BinaryLogistic, LinearMulticlass, Model, ParamVector, make_blobs
from advland.rng import RngStream

from oracles import vertex_max_loss


def linear_model(W):
    W = np.asarray(W, dtype=np.float64)
    arch = LinearMulticlass(W.shape[1], W.shape[0])
    return Model(arch, ParamVector(W.ravel(), arch.param_layout()))


def logistic_model(w):
    w = np.asarray(w, dtype=np.float64)
    arch = BinaryLogistic(w.size)
    return Model(arch, ParamVector(w, arch.param_layout()))


# ---------------------------------------------------------------------------
# Budget / config validation
# ---------------------------------------------------------------------------

def test_budget_validation():
    with pytest.raises(ValueError):
        AdvBudget("one", 0.1)
    with pytest.raises(ValueError):
        AdvBudget("inf", -0.1)
    with pytest.raises(ValueError):
        PgdConfig(steps=0, step_size=0.1)


def test_mnist_style_iteration_rule():
    cfg = mnist_style_pgd(0.3)
    assert cfg.step_size == 0.01
    assert cfg.steps == 40


# ---------------------------------------------------------------------------
# FGSM
# ---------------------------------------------------------------------------

def test_fgsm_zero_gradient_returns_input():
    model = linear_model(np.zeros((3, 2)))
    x = np.array([0.4, -0.7])
    out = fgsm(model, x, 1, AdvBudget("inf", 0.25))
    assert np.array_equal(out, x)


def test_fgsm_step_formula():
    # One feature, gradient -2 at x: step moves against the gradient sign.
    model = logistic_model([2.0])
    x = np.array([0.5])
    g = core.loss_grad_input(model, x, 0)
    assert g[0] < 0
    out = fgsm(model, x, 0, AdvBudget("inf", 0.1))
    assert out[0] == pytest.approx(0.4, abs=1e-15)


def test_fgsm_domain_clamp():
    model = logistic_model([1.0])
    x = np.array([0.95])
    g = core.loss_grad_input(model, x, 1)  # label 1 -> signed -1 -> positive gradient
    assert g[0] > 0
    out = fgsm(model, x, 1, AdvBudget("inf", 0.1, domain_clip=(0.0, 1.0)))
    assert out[0] == 1.0


# ---------------------------------------------------------------------------
# PGD
# ---------------------------------------------------------------------------

def test_pgd_eps_zero_short_circuits():
    model = logistic_model([1.0, -1.0])
    x = np.array([0.2, 0.3])
    out = pgd(model, x, 0, AdvBudget("inf", 0.0),
              PgdConfig(steps=5, step_size=0.1), RngStream(0))
    assert np.array_equal(out, x)


def test_pgd_single_step_equals_fgsm():
    rng = np.random.default_rng(2)
    model = linear_model(rng.normal(size=(3, 4)))
    x = rng.normal(size=4)
    budget = AdvBudget("inf", 0.2)
    cfg = PgdConfig(steps=1, step_size=0.2, random_start=False)
    a = pgd(model, x, 1, budget, cfg, RngStream(7))
    b = fgsm(model, x, 1, budget)
    assert np.array_equal(a, b)


def test_pgd_feasibility_linf_and_box():
    rng = np.random.default_rng(3)
    model = linear_model(rng.normal(size=(4, 6)))
    X = rng.uniform(0.2, 0.8, size=(10, 6))
    y = rng.integers(0, 4, size=10)
    budget = AdvBudget("inf", 0.15, domain_clip=(0.0, 1.0))
    adv = pgd_batch(model, X, y, budget, PgdConfig(steps=12, step_size=0.03),
                    RngStream(4))
    assert np.max(np.abs(adv - X)) <= 0.15 + 1e-12
    assert adv.min() >= 0.0 and adv.max() <= 1.0


def test_pgd_feasibility_l2():
    rng = np.random.default_rng(4)
    model = linear_model(rng.normal(size=(3, 5)))
    X = rng.normal(size=(8, 5))
    y = rng.integers(0, 3, size=8)
    budget = AdvBudget("two", 0.5)
    adv = pgd_batch(model, X, y, budget, PgdConfig(steps=10, step_size=0.2),
                    RngStream(5))
    assert np.all(np.linalg.norm(adv - X, axis=1) <= 0.5 + 1e-12)


def test_pgd_deterministic_given_stream():
    rng = np.random.default_rng(6)
    model = linear_model(rng.normal(size=(3, 5)))
    X = rng.normal(size=(7, 5))
    y = rng.integers(0, 3, size=7)
    budget = AdvBudget("inf", 0.1)
    cfg = PgdConfig(steps=8, step_size=0.02, random_start=True, restarts=3)
    a = pgd_batch(model, X, y, budget, cfg, RngStream(42, "attack"))
    b = pgd_batch(model, X, y, budget, cfg, RngStream(42, "attack"))
    assert a.tobytes() == b.tobytes()


def test_pgd_sandwich_on_linear_models():
    rng = np.random.default_rng(8)
    for trial in range(5):
        model = linear_model(rng.normal(size=(3, 6)))
        x = rng.normal(size=6)
        y = int(rng.integers(0, 3))
        budget = AdvBudget("inf", 0.2)
        adv = pgd(model, x, y, budget, PgdConfig(steps=30, step_size=0.02, restarts=2),
                  RngStream(trial))
        clean = core.per_example_loss(model, x[None], np.array([y]))[0]
        got = core.per_example_loss(model, adv[None], np.array([y]))[0]
        exact, _ = bruteforce_adv_loss(model, x, y, budget)
        assert clean - 1e-9 <= got <= exact + 1e-9


def test_pgd_reaches_vertex_oracle_level():
    rng = np.random.default_rng(9)
    model = linear_model(rng.normal(size=(4, 8)))
    x = rng.normal(size=8)
    y = 2
    budget = AdvBudget("inf", 0.2)
    adv = pgd(model, x, y, budget, PgdConfig(steps=40, step_size=0.01),
              RngStream(1))
    got = core.per_example_loss(model, adv[None], np.array([y]))[0]
    exact, _ = bruteforce_adv_loss(model, x, y, budget)
    assert got >= 0.95 * exact


# ---------------------------------------------------------------------------
# Vertex oracle
# ---------------------------------------------------------------------------

def test_oracle_zero_weights_log_k():
    model = linear_model(np.zeros((5, 3)))
    for eps in (0.0, 0.3, 2.0):
        val, _ = bruteforce_adv_loss(model, np.array([1.0, 2.0, -1.0]), 0,
                                     AdvBudget("inf", eps))
        assert val == pytest.approx(np.log(5.0), abs=1e-12)


def test_oracle_eps_zero_equals_clean_loss():
    rng = np.random.default_rng(10)
    model = linear_model(rng.normal(size=(3, 4)))
    x = rng.normal(size=4)
    val, vx = bruteforce_adv_loss(model, x, 1, AdvBudget("inf", 0.0))
    clean = core.per_example_loss(model, x[None], np.array([1]))[0]
    assert val == pytest.approx(clean, abs=1e-12)
    assert np.array_equal(vx, x)


def test_oracle_pinned_instance():
    # Frozen from direct 4-vertex enumeration of this instance.
    W = np.array([[0.8, -0.4], [-0.6, 0.9], [0.1, 0.3]])
    x = np.array([0.5, -0.2])
    val, vx = bruteforce_adv_loss(linear_model(W), x, 0, AdvBudget("inf", 0.5))
    assert val == pytest.approx(1.3112094494883018, abs=1e-12)
    assert np.allclose(vx, [0.0, 0.3], atol=1e-12)


def test_oracle_matches_independent_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(5):
        W = rng.normal(size=(4, 5))
        x = rng.normal(size=5)
        y = int(rng.integers(0, 4))
        eps = float(rng.uniform(0.05, 0.6))
        val, _ = bruteforce_adv_loss(linear_model(W), x, y, AdvBudget("inf", eps))
        want, _ = vertex_max_loss(W, x, y, eps)
        assert val == pytest.approx(want, rel=1e-12)


def test_oracle_monotone_in_eps():
    rng = np.random.default_rng(12)
    model = linear_model(rng.normal(size=(3, 6)))
    x = rng.normal(size=6)
    vals = [bruteforce_adv_loss(model, x, 0, AdvBudget("inf", e))[0]
            for e in np.linspace(0.0, 1.0, 9)]
    assert np.all(np.diff(vals) >= -1e-12)


def test_oracle_dimension_refusal():
    model = linear_model(np.zeros((2, 21)))
    with pytest.raises(OracleBoundError, match="20"):
        bruteforce_adv_loss(model, np.zeros(21), 0, AdvBudget("inf", 0.1))


def test_oracle_respects_domain_box():
    W = np.array([[1.0], [-1.0]])
    x = np.array([0.9])
    val, vx = bruteforce_adv_loss(linear_model(W), x, 0,
                                  AdvBudget("inf", 0.5, domain_clip=(0.0, 1.0)))
    want, wx = vertex_max_loss(W, x, 0, 0.5, domain=(0.0, 1.0))
    assert val == pytest.approx(want, rel=1e-12)
    assert np.allclose(vx, wx)


# ---------------------------------------------------------------------------
# Robust error
# ---------------------------------------------------------------------------

def test_constant_classifier_robust_error():
    # Logits fixed regardless of input: predicts class 0 always.
    W = np.zeros((10, 4))
    model = linear_model(W)
    inputs = np.random.default_rng(0).normal(size=(100, 4))
    labels = np.arange(100) % 10
    ds = core.Dataset(inputs, labels, num_classes=10)
    err = robust_error(model, ds, AdvBudget("inf", 0.1),
                       PgdConfig(steps=3, step_size=0.05), RngStream(0))
    assert err == pytest.approx(0.9)


def test_robust_error_eps_zero_is_clean_error():
    rng = np.random.default_rng(13)
    model = linear_model(rng.normal(size=(3, 4)))
    ds = core.Dataset(rng.normal(size=(50, 4)), rng.integers(0, 3, size=50), 3)
    err = robust_error(model, ds, AdvBudget("inf", 0.0),
                       PgdConfig(steps=3, step_size=0.05), RngStream(0))
    clean = float(np.mean(core.predict(model, ds.inputs) != ds.labels))
    assert err == clean


def test_margin_data_certified_robust():
    # l_inf margin 0.6 > eps = 0.3: the certificate classifier stays correct
    # under the strongest perturbation; the vertex oracle certifies each point.
    ds, W = make_blobs(seed=5, n=40, m=6, k=3, margin=0.6, return_certificate=True)
    model = linear_model(W)
    budget = AdvBudget("inf", 0.3)
    err = robust_error(model, ds, budget, PgdConfig(steps=20, step_size=0.03),
                       RngStream(3))
    assert err == 0.0
    for i in range(ds.n):
        _, vx = bruteforce_adv_loss(model, ds.inputs[i], int(ds.labels[i]), budget)
        assert core.predict(model, vx[None])[0] == ds.labels[i]
