import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import strong_form_bump

from fracpx.exponents import ExponentError, affine_scalar, constant_pair, constant_scalar, example_exponent
from fracpx.grid import BoxDomain, Grid, interpolate
from fracpx.nonlocal_ops import (combined_norms, gagliardo_modular, gagliardo_seminorm, imbedding_ratio,
                                 random_pinned_function, strong_form_diagnostic, weak_form)

UNIT = BoxDomain([(0.0, 1.0)])
G33 = Grid(UNIT, 33)


def test_linear_function_unit_seminorm():
    u = interpolate(lambda x: x[..., 0], G33)
    p = constant_pair(2.0, 0.5)
    assert gagliardo_modular(u, p) == pytest.approx(1.0, rel=1e-10)
    assert gagliardo_seminorm(u, p) == pytest.approx(1.0, rel=1e-9)


def test_constant_has_zero_seminorm():
    u = interpolate(lambda x: np.full(x.shape[0], 4.0), G33)
    assert gagliardo_seminorm(u, constant_pair(1.7, 0.3)) <= 1e-12


@given(c=st.floats(1e-2, 1e2), seed=st.integers(0, 2**16))
def test_seminorm_is_homogeneous_for_variable_p(c, seed):
    u = interpolate(random_pinned_function(UNIT, np.random.default_rng(seed)), G33, True)
    p = example_exponent(1.6, 1.5, 0.4, domain=UNIT)
    assert gagliardo_seminorm(u * c, p) == pytest.approx(c * gagliardo_seminorm(u, p), rel=1e-8)


@given(scale=st.floats(-3, 3), seed=st.integers(0, 2**16))
def test_combined_norm_equivalence(scale, seed):
    u = interpolate(random_pinned_function(UNIT, np.random.default_rng(seed)), G33, True) * 10.0**scale
    rep = combined_norms(u, affine_scalar(1.5, [1.5], UNIT), example_exponent(1.8, 1.5, 0.3, domain=UNIT))
    assert rep.passed, rep.assertions
    assert 0.5 * rep.norm_sum <= rep.norm_luxemburg <= 2.0 * rep.norm_sum


def test_weak_form_diagonal_and_linearity():
    rng = np.random.default_rng(0)
    u, v, w = (interpolate(random_pinned_function(UNIT, rng), G33, True) for _ in range(3))
    p = example_exponent(2.2, 1.5, 0.5, domain=UNIT)
    assert weak_form(u, u, p) == pytest.approx(gagliardo_modular(u, p, "full"), rel=1e-12)
    assert weak_form(u, v + w * 2.0, p) == pytest.approx(weak_form(u, v, p) + 2 * weak_form(u, w, p), rel=1e-10)


@pytest.mark.parametrize("s,n,tol", [(0.25, 512, 1e-3), (0.5, 512, 2e-3)])
def test_strong_form_of_bump(s, n, tol):
    # u = (1 - x^2)_+^s on (-1, 1); x = 0 is a cell midpoint for even n
    g = Grid(BoxDomain([(-1.0, 1.0)]), n)
    u = interpolate(lambda x: np.clip(1 - x[..., 0] ** 2, 0, None) ** s, g, True)
    h = 2 / (n - 1)
    rep = strong_form_diagnostic(u, constant_pair(2.0, s), 0.0, [h / 4, h / 16, h / 64])
    assert rep.value == pytest.approx(strong_form_bump(s), rel=tol)


def test_strong_form_of_odd_function_vanishes_at_centre():
    g = Grid(UNIT, 65)
    u = interpolate(lambda x: np.sin(2 * np.pi * x[..., 0]), g, True)
    rep = strong_form_diagnostic(u, constant_pair(2.5, 0.4), 0.5, [1e-1, 1e-2, 1e-3])
    assert abs(rep.value) < 1e-10


def test_strong_form_input_checks():
    u = interpolate(lambda x: x[..., 0], G33, True)
    with pytest.raises(ValueError):
        strong_form_diagnostic(u, constant_pair(2.0, 0.5), 1.0, [0.1, 0.01])
    with pytest.raises(ValueError):
        strong_form_diagnostic(u, constant_pair(2.0, 0.5), 0.5, [0.01, 0.1])


def test_random_pinned_function_vanishes_on_boundary():
    g = random_pinned_function(BoxDomain([(0, 2), (-1, 1)]), np.random.default_rng(0))
    edge = np.array([[0.0, 0.3], [2.0, -0.2], [1.1, -1.0], [0.4, 1.0]])
    assert np.allclose(g(edge), 0.0, atol=1e-12)


def test_imbedding_ratio_is_stable():
    rep = imbedding_ratio(constant_scalar(2.0), constant_scalar(1.5), constant_pair(2.0, 0.5), 6, 0)
    assert rep.stable and not rep.violations
    assert 0 < rep.max_ratio < np.inf


def test_imbedding_ratio_preconditions():
    p = constant_pair(1.5, 0.5)  # critical exponent 6
    with pytest.raises(ExponentError):
        imbedding_ratio(constant_scalar(2.0), constant_scalar(7.0), p, 2, 0)
    with pytest.raises(ExponentError):
        imbedding_ratio(constant_scalar(1.2), constant_scalar(1.5), p, 2, 0)
    with pytest.raises(ValueError):
        imbedding_ratio(constant_scalar(2.0), constant_scalar(1.5), p, 0, 0)
