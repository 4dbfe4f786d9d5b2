import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cryorient import losses as L
from cryorient import so3
from cryorient.errors import InvalidArgument

from strategies import random_quats, unit_quats

I = np.array([1.0, 0, 0, 0])
Z = np.array([0, 0, 0, 1.0])


def test_regression_examples(rng):
    q = random_quats(rng, 1)[0]
    assert L.regression_loss(q, q) == 0
    assert L.regression_loss(-q, q) == 0
    assert L.regression_loss(I, Z) == pytest.approx(np.pi)


def test_distance_loss_examples(rng):
    a, b = random_quats(rng, 2)
    assert L.distance_loss(a, b, a, b) == 0
    assert L.distance_loss(I, I, I, Z) == pytest.approx(np.pi)


def test_distance_loss_global_rotation(rng):
    g, a, b, ta, tb = (random_quats(rng, 1000) for _ in range(5))
    l0 = L.distance_loss(a, b, ta, tb)
    l1 = L.distance_loss(so3.multiply(g, a), so3.multiply(g, b), ta, tb)
    assert np.allclose(l0, l1, atol=1e-9)


@given(unit_quats(), unit_quats(), unit_quats(), unit_quats())
def test_losses_nonnegative_and_pair_symmetric(pi, pj, ti, tj):
    w = L.curriculum_weights(3, 10)
    assert L.distance_loss(pi, pj, ti, tj) >= 0
    assert L.full_loss(pi, pj, ti, tj, w) == pytest.approx(L.full_loss(pj, pi, tj, ti, w), abs=1e-12)


def test_curriculum_endpoints():
    w0, wl = L.curriculum_weights(0, 30), L.curriculum_weights(30, 30)
    assert (w0.beta1, w0.beta2) == (0.0, 1.0)
    assert (wl.beta1, wl.beta2) == (0.5, 0.0)


def test_curriculum_quarter():
    w = L.curriculum_weights(10, 40)
    assert (w.beta1, w.beta2) == (0.25, 0.5)


def test_curriculum_monotone():
    ws = [L.curriculum_weights(i, 50) for i in range(51)]
    b1 = [w.beta1 for w in ws]
    b2 = [w.beta2 for w in ws]
    assert b1 == sorted(b1) and b2 == sorted(b2, reverse=True)
    assert all(0 <= a <= 0.5 and 0 <= b <= 1 for a, b in zip(b1, b2))


def test_curriculum_disabled_is_constant():
    assert {(w.beta1, w.beta2) for w in (L.curriculum_weights(i, 5, enabled=False) for i in range(6))} == {(0.5, 0.5)}


@pytest.mark.parametrize("i,l", [(-1, 5), (6, 5), (0, 0)])
def test_curriculum_bad_args(i, l):
    with pytest.raises(InvalidArgument):
        L.curriculum_weights(i, l)


def test_full_loss_endpoints(rng):
    pi, pj, ti, tj = (random_quats(rng, 16) for _ in range(4))
    start = L.full_loss(pi, pj, ti, tj, L.curriculum_weights(0, 10))
    assert start == pytest.approx(np.mean(L.distance_loss(pi, pj, ti, tj)))
    end = L.full_loss(pi, pj, ti, tj, L.curriculum_weights(10, 10))
    reg = L.regression_loss(pi, ti) + L.regression_loss(pj, tj)
    assert end == pytest.approx(0.5 * np.mean(reg))


def test_full_loss_empty_batch():
    with pytest.raises(InvalidArgument):
        e = np.zeros((0, 4))
        L.full_loss(e, e, e, e, L.curriculum_weights(0, 1))


# -- one-cycle ---------------------------------------------------------------------

CFG = L.OneCycleConfig(total_steps=1000, lr_max=1e-3)


def test_one_cycle_start_and_peak():
    assert L.one_cycle(0, CFG) == pytest.approx((1e-3 / 25, 0.95))
    assert L.one_cycle(300, CFG) == pytest.approx((1e-3, 0.85))
    lr, mom = L.one_cycle(1000, CFG)
    assert lr == pytest.approx(1e-7) and mom == pytest.approx(0.95)


def test_one_cycle_shape():
    lr, mom = np.array([L.one_cycle(s, CFG) for s in range(1001)]).T
    peak = 300
    assert np.all(np.diff(lr[:peak + 1]) >= 0) and np.all(np.diff(lr[peak:]) <= 0)
    assert np.all(np.diff(mom[:peak + 1]) <= 0) and np.all(np.diff(mom[peak:]) >= 0)
    assert lr[-1] <= lr[0]
    # continuity: no step jumps by more than the largest cosine increment
    assert np.max(np.abs(np.diff(lr))) < 1e-3 * math.pi / 2 / peak


@pytest.mark.parametrize("step", [-1, 1001])
def test_one_cycle_out_of_range(step):
    with pytest.raises(InvalidArgument):
        L.one_cycle(step, CFG)


@given(st.integers(1, 500), st.floats(0.05, 0.95))
def test_one_cycle_bounds(total, warm):
    cfg = L.OneCycleConfig(total_steps=total, warmup_fraction=warm)
    for s in range(0, total + 1, max(1, total // 17)):
        lr, mom = L.one_cycle(s, cfg)
        assert cfg.lr_final - 1e-18 <= lr <= cfg.lr_max + 1e-18
        assert cfg.momentum_low - 1e-12 <= mom <= cfg.momentum_high + 1e-12


def test_schedule_table_columns():
    rows = L.schedule_table(L.OneCycleConfig(total_steps=20), epochs=4)
    assert len(rows) == 21 and rows[0][0] == 0
    assert rows[0][3:] == (0.0, 1.0) and rows[-1][3:] == (0.5, 0.0)
