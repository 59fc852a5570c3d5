import pytest

from advland.schedule import (
    EpsScheduler, LrSchedule, PeriodPlan, constant_eps, cosine_eps, eps_at,
    linear_eps, lr_at, single_period,
)


# ---------------------------------------------------------------------------
# eps_at
# ---------------------------------------------------------------------------

def test_cosine_midpoint_value():
    s = cosine_eps(0.0, 0.6, 10, 0.4)
    assert eps_at(s, 5) == pytest.approx(0.3, abs=1e-15)


def test_cosine_clips_to_target():
    # eps_max 0.6 overshooting a 0.4 target: warmup ends pinned at the target.
    s = cosine_eps(0.0, 0.6, 10, 0.4)
    assert eps_at(s, 10) == pytest.approx(0.4)
    assert eps_at(s, 17) == pytest.approx(0.4)


def test_linear_clips_to_target():
    # eps_max 0.8 overshooting a 0.4 target: the ramp clips at the target.
    s = linear_eps(0.0, 0.8, 10, 0.4)
    for d in (5, 6, 9, 10, 30):
        assert eps_at(s, d) == pytest.approx(0.4)
    assert eps_at(s, 2) == pytest.approx(0.16)


def test_constant_scheduler():
    s = constant_eps(0.25)
    assert all(eps_at(s, d) == 0.25 for d in range(20))


def test_negative_eps_min_lengthens_zero_phase():
    s = linear_eps(-0.4, 0.8, 12, 0.4)
    assert eps_at(s, 0) == 0.0
    assert eps_at(s, 3) == 0.0           # raw is still <= 0 here
    assert eps_at(s, 12) == pytest.approx(0.4)


def test_warmup_required():
    with pytest.raises(ValueError):
        eps_at(EpsScheduler("cosine", 0.4, 0.0, 0.6, 0), 1)


def test_eps_nondecreasing_within_period():
    for make in (cosine_eps, linear_eps):
        s = make(0.0, 0.7, 25, 0.5)
        vals = [eps_at(s, d, period=(0, 60)) for d in range(60)]
        assert all(b - a >= -1e-15 for a, b in zip(vals, vals[1:]))
        assert all(0.0 <= v <= 0.5 for v in vals)


def test_eps_reaches_target_and_stays():
    s = cosine_eps(0.0, 0.6, 10, 0.4)
    for d in range(10, 40):
        assert eps_at(s, d) == pytest.approx(0.4)


def test_period_rescaling_halved_period():
    s = cosine_eps(0.0, 0.6, 40, 0.4)
    L = 80
    for t in range(L // 2):
        short = eps_at(s, t, period=(0, L // 2), nominal=L)
        long = eps_at(s, 2 * t, period=(0, L))
        assert short == pytest.approx(long, abs=1e-12)


def test_eps_outside_period_rejected():
    s = cosine_eps(0.0, 0.6, 10, 0.4)
    with pytest.raises(ValueError):
        eps_at(s, 30, period=(0, 20))


# ---------------------------------------------------------------------------
# lr_at
# ---------------------------------------------------------------------------

def test_step_decay():
    plan = LrSchedule("step", 0.1, boundaries=(100, 150))
    assert lr_at(plan, 50) == pytest.approx(0.1)
    assert lr_at(plan, 120) == pytest.approx(0.01)
    assert lr_at(plan, 180) == pytest.approx(0.001)


def test_exponential_segment_log_linear():
    plan = LrSchedule("exp_segment", 1e-3, end_value=1e-4, segment=(100, 150))
    assert lr_at(plan, 50) == pytest.approx(1e-3)
    assert lr_at(plan, 125) == pytest.approx(10 ** -3.5, rel=1e-12)
    assert lr_at(plan, 160) == pytest.approx(1e-4)


def test_constant_lr():
    plan = LrSchedule("constant", 1e-4)
    assert all(lr_at(plan, d) == 1e-4 for d in range(200))


def test_periodic_reset_restarts_shape():
    # Each period replays the full 200-epoch shape compressed proportionally.
    plan = LrSchedule("step", 0.1, boundaries=(100, 150))
    periods = PeriodPlan((100, 150, 200))
    nominal = periods.total_epochs
    start, length = periods.period_of(125)
    assert (start, length) == (100, 50)
    # Offset 25 of 50 rescales to nominal epoch 100: one boundary crossed.
    assert lr_at(plan, 125, period=(start, length), nominal=nominal) == pytest.approx(0.01)
    # Period starts reset to the base rate.
    for d in (0, 100, 150):
        assert lr_at(plan, d, period=periods.period_of(d), nominal=nominal) == pytest.approx(0.1)
    # Period ends approach the fully decayed rate.
    assert lr_at(plan, 199, period=periods.period_of(199), nominal=nominal) == pytest.approx(0.001)


def test_period_plan_validation():
    with pytest.raises(ValueError):
        PeriodPlan(())
    with pytest.raises(ValueError):
        PeriodPlan((100, 100))
    plan = PeriodPlan((100, 150, 200))
    assert plan.n_periods == 3
    assert plan.period_of(0) == (0, 100)
    assert plan.period_of(150) == (150, 50)
    assert plan.is_period_end(99) and plan.is_period_end(199)
    assert not plan.is_period_end(100)
    assert single_period(20).boundaries == (20,)
