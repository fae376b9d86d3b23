import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evsi_mm.psa import InbDraws, compute_inb, inb_moments

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_two_arm_subtraction():
    assert compute_inb([[1.0, 3.0]], reference_arm=1).values[0, 0] == -2.0


def test_default_reference_is_last_arm():
    inb = compute_inb(np.array([[1.0, 2.0, 7.0]]))
    assert inb.reference_arm == 2
    assert inb.arm_labels == (0, 1)
    np.testing.assert_array_equal(inb.values, [[-6.0, -5.0]])


def test_identical_arms_give_zero_table():
    nb = np.repeat(np.arange(5.0)[:, None], 3, axis=1)
    assert np.all(compute_inb(nb).values == 0)


def test_single_arm_rejected():
    with pytest.raises(ValueError):
        compute_inb(np.ones((4, 1)))
    with pytest.raises(ValueError):
        compute_inb(np.ones((4, 2)), reference_arm=2)


def test_non_finite_rejected():
    with pytest.raises(ValueError):
        InbDraws(np.array([1.0, np.nan]), 1, (0,))


def test_two_point_moments():
    m = inb_moments(np.array([1.0, 3.0]))
    assert m.mean[0] == 2.0 and m.variance == 2.0
    assert m.covariance.shape == (1, 1)


def test_constant_draws():
    assert inb_moments(np.full(10, 4.0)).variance == 0.0


def test_too_few_draws():
    with pytest.raises(ValueError):
        inb_moments(np.array([1.0]))


def test_variance_rejects_multi():
    with pytest.raises(ValueError):
        inb_moments(np.random.default_rng(0).normal(size=(5, 2))).variance


def test_covariance_matches_double_loop():
    x = np.random.default_rng(1).normal(size=(200, 2)) * [3.0, 0.5]
    cov = inb_moments(x).covariance
    s = len(x)
    mean = x.mean(axis=0)
    brute = np.zeros((2, 2))
    for a in range(2):
        for b in range(2):
            brute[a, b] = sum((x[k, a] - mean[a]) * (x[k, b] - mean[b]) for k in range(s)) / (s - 1)
    np.testing.assert_allclose(cov, brute, rtol=1e-10, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(2, 4)), elements=finite),
       st.data())
def test_reference_column_restores_nb(nb, data):
    ref = data.draw(st.integers(0, nb.shape[1] - 1))
    inb = compute_inb(nb, ref)
    rebuilt = np.empty_like(nb)
    rebuilt[:, ref] = nb[:, ref]
    rebuilt[:, list(inb.arm_labels)] = inb.values + nb[:, [ref]]
    np.testing.assert_allclose(rebuilt, nb, rtol=0, atol=1e-9 * max(1.0, np.abs(nb).max()))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 40), st.integers(1, 3)), elements=finite),
       st.randoms(use_true_random=False))
def test_covariance_permutation_invariant(x, rnd):
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    a = inb_moments(x).covariance
    b = inb_moments(x[perm]).covariance
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * max(1.0, np.abs(a).max()))
    assert np.allclose(a, a.T)
