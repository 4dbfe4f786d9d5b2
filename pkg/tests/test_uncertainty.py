import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cryorient import rep_heads, uncertainty as U
from cryorient.errors import InvalidArgument

from strategies import thetas


def test_diagonal_example():
    s = U.dispersions(np.diag([4.0, 9, 16, 1]))
    assert (s.lambda1, s.lambda2, s.lambda3) == (-15, -8, -3)
    assert s.lambda_max == -3 and s.trace_stat == -26
    assert not s.degenerate


def test_isotropic_is_degenerate():
    s = U.dispersions(2.5 * np.eye(4))
    assert s.lambda1 == s.lambda2 == s.lambda3 == s.lambda_max == s.trace_stat == 0
    assert s.degenerate


def test_rotation_conjugation_invariance(rng):
    A = rep_heads.qcqp_build_A(rng.normal(size=10))
    s0 = U.dispersions(A)
    for _ in range(10):
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        s1 = U.dispersions(Q @ A @ Q.T)
        assert s1.lambda_max == pytest.approx(s0.lambda_max, abs=1e-9)
        assert s1.trace_stat == pytest.approx(s0.trace_stat, abs=1e-9)


def test_rejects_non_psd():
    with pytest.raises(InvalidArgument):
        U.dispersions(np.diag([-1.0, 1, 1, 1]))


@given(thetas)
def test_ordering_from_qcqp(theta):
    d = U.dispersion_arrays(rep_heads.qcqp_build_A(theta))
    assert d["lambda1"] <= d["lambda2"] <= d["lambda3"] <= 0
    assert d["trace_stat"] <= d["lambda_max"] <= 0
    assert d["lambda_max"] == d["lambda3"]


@given(thetas, st.floats(0.0, 100.0))
def test_shift_invariance(theta, c):
    A = rep_heads.qcqp_build_A(theta)
    a, b = U.dispersion_arrays(A), U.dispersion_arrays(A + c * np.eye(4))
    for k in ("lambda1", "lambda2", "lambda3", "trace_stat"):
        assert b[k] == pytest.approx(a[k], abs=1e-9 * max(1.0, abs(c), np.abs(A).max()))


def test_quantile_filter_example():
    m = U.quantile_filter([-5.0, -1, -3, -2], 0.75)
    assert list(m) == [True, False, True, True]


def test_quantile_filter_keep_all():
    assert U.quantile_filter([3.0, 1, 2], 1.0).all()


def test_quantile_filter_sort_oracle(rng):
    s = rng.normal(size=10_000)
    m = U.quantile_filter(s, 0.75)
    assert m.sum() == 7500
    assert s[m].max() <= s[~m].min()


def test_quantile_filter_ties_by_index():
    m = U.quantile_filter([0.0, 0, 0, 0], 0.5)
    assert list(m) == [True, True, False, False]


def test_quantile_filter_degenerate_dropped_first():
    m = U.quantile_filter([-9.0, -1, -2, -3], 0.75, degenerate=[True, False, False, False])
    assert list(m) == [False, True, True, True]


@pytest.mark.parametrize("keep", [0.0, -0.1, 1.5])
def test_quantile_filter_bad_fraction(keep):
    with pytest.raises(InvalidArgument):
        U.quantile_filter([1.0, 2.0], keep)


def test_quantile_filter_empty():
    with pytest.raises(InvalidArgument):
        U.quantile_filter([], 0.5)
