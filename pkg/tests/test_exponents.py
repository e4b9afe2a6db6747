import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fracpx.exponents import (ExponentError, PairExponent, affine_scalar, affine_trace_pair, check_log_holder,
                              constant_pair, constant_scalar, critical_exponent, example_exponent,
                              piecewise_polynomial_pair, piecewise_polynomial_scalar)
from fracpx.grid import BoxDomain

UNIT = BoxDomain([(0.0, 1.0)])
SQUARE = BoxDomain([(0.0, 1.0), (0.0, 1.0)])


def test_constant_and_bounds():
    q = constant_scalar(2.5)
    assert q(np.array([0.1, 0.7])).tolist() == [2.5, 2.5]
    assert (q.lower, q.upper) == (2.5, 2.5)
    for bad in (1.0, 0.5):
        with pytest.raises(ExponentError):
            constant_scalar(bad)
    with pytest.raises(ExponentError):
        constant_pair(2.0, 1.0)


def test_affine_bounds_from_corners():
    q = affine_scalar(2.0, [1.0, -0.5], SQUARE)
    assert q.bounds == (1.5, 3.0)
    q.validate(SQUARE)


def test_piecewise_table():
    q = piecewise_polynomial_scalar([0, 0.5, 1], [[2.0, 1.0], [2.5, 0.0, 2.0]])
    assert q(np.array([0.25])) == pytest.approx(2.25)
    assert q(np.array([0.75])) == pytest.approx(2.5 + 2 * 0.0625)
    # clamped outside the table
    assert q(np.array([2.0])) == pytest.approx(q(np.array([1.0])))
    q.validate(UNIT)
    with pytest.raises(ExponentError):
        piecewise_polynomial_scalar([0, 1, 0.5], [[2.0], [2.0]])


def test_pair_symmetry_enforced():
    bad = PairExponent(lambda x, y: 2.0 + 0.1 * x[..., 0], (2.0, 2.1), 0.5)
    with pytest.raises(ExponentError, match="symmetric"):
        bad.validate(UNIT)
    affine_trace_pair(2.0, [0.5], 0.4, UNIT).validate(UNIT)
    piecewise_polynomial_pair([0, 1], [[2.0, 0.5]], 0.3).validate(UNIT)


def test_declared_bounds_enforced():
    liar = PairExponent(lambda x, y: np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], 3.0), (2.0, 2.5), 0.5)
    with pytest.raises(ExponentError, match="bounds"):
        liar.validate(UNIT)


@pytest.mark.parametrize("dom", [UNIT, SQUARE])
def test_example_exponent(dom):
    p = example_exponent(1.8, 2.5, 0.4, domain=dom)
    p.validate(dom)
    x = np.random.default_rng(0).uniform(0, 1, (50, dom.dim))
    assert np.allclose(p.trace(x), 1.8)
    y = np.random.default_rng(1).uniform(0, 1, (50, dom.dim))
    # on the product box the bump equals one
    assert np.allclose(p(x, y), 1.8 + np.linalg.norm(x - y, axis=-1))
    with pytest.raises(ExponentError):
        example_exponent(2.0, 0.5, 0.5, domain=dom)


def test_example_exponent_without_domain_has_compact_bump():
    p = example_exponent(2.0, 1.0, 0.5, dim=1)
    assert p(np.array([0.8]), np.array([-0.8])) == pytest.approx(2.0)
    assert p(np.array([0.1]), np.array([-0.1])) > 2.0


def test_critical_exponent():
    p = constant_pair(1.5, 0.5, 1)
    assert critical_exponent(p, np.array([0.3])) == pytest.approx(1.5 / (1 - 0.75))
    with pytest.raises(ExponentError):
        critical_exponent(constant_pair(2.0, 0.5, 1), np.array([0.3]))


@given(c=st.floats(1.05, 10))
def test_conjugate(c):
    q = affine_scalar(c, [0.5], UNIT)
    x = np.linspace(0, 1, 7)
    assert np.allclose(1 / q(x) + 1 / q.conjugate()(x), 1.0)


def test_log_holder_constant_is_zero():
    rep = check_log_holder(constant_pair(2.3, 0.5, 2), [0.1, 0.01], samples=512)
    assert rep.sup_value == 0.0
    assert all(e["sup"] == 0.0 for e in rep.per_epsilon)


def test_log_holder_example_small():
    rep = check_log_holder(example_exponent(1.5, 1.5, 0.5, dim=1), [1e-1, 1e-2, 1e-3], samples=1024)
    assert max(e["sup"] for e in rep.per_epsilon) <= 0.37
    # shrinking balls shrink the modulus
    sups = [e["sup"] for e in rep.per_epsilon]
    assert sups == sorted(sups, reverse=True)


def test_log_holder_rejects_bad_input():
    p = constant_pair(2.0, 0.5)
    with pytest.raises(ValueError):
        check_log_holder(p, [])
    with pytest.raises(ValueError):
        check_log_holder(p, [0.1], samples=0)
