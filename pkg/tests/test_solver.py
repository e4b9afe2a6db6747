import numpy as np
import pytest

from fracpx.exponents import constant_pair, constant_scalar, example_exponent
from fracpx.grid import BoxDomain, Grid, GridFunction, interpolate, sup_norm
from fracpx.nonlocal_ops import random_pinned_function
from fracpx.solver import (SIGN_PATTERNS, Energy, ModificationError, Nonlinearity, SolveOptions, beta_default,
                           cutoff_default, disjoint_bumps, energy_phi, grad_phi, minimize_energy,
                           modified_nonlinearity, multistart_small_solutions, prototype_nonlinearity, splus_probe,
                           subspace_negativity, zero_nonlinearity)

UNIT = BoxDomain([(0.0, 1.0)])
G17 = Grid(UNIT, 17)
G33 = Grid(UNIT, 33)
P2 = constant_pair(2.0, 0.5)
C_IMB = 0.2024  # empirical value for P2 on the unit interval


def proto(lam=3.0):
    return prototype_nonlinearity(lam, constant_scalar(1.5), constant_scalar(3.0))


def test_prototype_is_consistent():
    assert proto().validate(UNIT) == []


def test_validate_catches_wrong_primitive():
    bad = Nonlinearity(lambda x, t: t, lambda x, t: t**2, (1.0, constant_scalar(2.0)), np.inf)
    assert any("dF/dt" in v for v in bad.validate(UNIT))


def test_cutoff_profile():
    cut = cutoff_default(0.1, beta_default(P2, C_IMB), C_IMB)
    assert cut.check(P2.p_minus, P2.p_plus) == []
    t = np.array([0.0, 0.05, 0.1, 0.15, 0.2, 0.3])
    assert cut.rho(t).tolist()[:3] == [1.0, 1.0, 1.0]
    assert cut.rho(t)[-2:].tolist() == [0.0, 0.0]
    with pytest.raises(ValueError):
        cutoff_default(0.0)


def test_modified_nonlinearity_agrees_near_zero_and_is_power_far_away():
    cut = cutoff_default(0.1, beta_default(P2, C_IMB), C_IMB)
    base = proto()
    mod = modified_nonlinearity(base, cut, P2.p_minus, UNIT)
    x = np.full((5, 1), 0.3)
    near = np.linspace(-0.1, 0.1, 5)
    assert np.allclose(mod.F(x, near), base.F(x, near))
    far = np.array([0.2, 0.5, -1.0, 3.0, -7.0])
    assert np.allclose(mod.F(x, far), cut.beta * np.abs(far) ** 2)
    assert mod.validate(UNIT, t_max=0.5) == []


def test_modification_rejected_for_small_lambda():
    cut = cutoff_default(0.1, beta_default(P2, C_IMB), C_IMB)
    with pytest.raises(ModificationError):
        modified_nonlinearity(proto(0.3), cut, P2.p_minus, UNIT)


@pytest.mark.parametrize("p", [constant_pair(2.0, 0.5), example_exponent(2.0, 1.5, 0.5, domain=UNIT)])
def test_grad_phi_against_differences(p):
    u = interpolate(random_pinned_function(UNIT, np.random.default_rng(2)), G17, True)
    G = grad_phi(u, p)
    for i in (2, 7, 11):
        e = np.zeros(G17.size)
        e[i] = 1e-6
        fd = (energy_phi(u.with_values(u.values + e), p) - energy_phi(u.with_values(u.values - e), p)) / 2e-6
        assert fd == pytest.approx(G[i], rel=1e-6)
    assert G[0] == 0.0 and G[-1] == 0.0


def test_zero_nonlinearity_gives_zero_solution():
    start = interpolate(random_pinned_function(UNIT, np.random.default_rng(0)), G17, True)
    rep = minimize_energy(start, P2, zero_nonlinearity(), SolveOptions(tol=1e-8))
    assert rep.converged
    assert sup_norm(rep.solution) < 1e-6
    assert all(b <= a for a, b in zip(rep.energy_history, rep.energy_history[1:]))


def test_minimize_needs_pinned_start():
    with pytest.raises(ValueError):
        minimize_energy(GridFunction(G17, np.ones(17)), P2)


def test_max_iters_reports_non_convergence():
    start = interpolate(random_pinned_function(UNIT, np.random.default_rng(0)), G17, True)
    rep = minimize_energy(start, P2, proto(), SolveOptions(max_iters=2))
    assert not rep.converged and rep.iterations == 2
    assert rep.diagnostics["status"] == "max_iters"


def test_plain_problem_solution_satisfies_weak_equation():
    start = interpolate(lambda x: 0.3 * np.sin(np.pi * x[..., 0]), G33, True)
    rep = minimize_energy(start, P2, proto(2.0), SolveOptions(tol=1e-8, lower_order=False))
    assert rep.converged
    assert rep.diagnostics["weak_residual_max"] <= 1e-8
    assert sup_norm(rep.solution) > 1e-3
    E = Energy(G33, P2, proto(2.0), lower_order=False)
    assert E.value(rep.solution.values) < E.value(np.zeros(33))


def test_symmetry_projection_keeps_parity():
    start = interpolate(lambda x: 0.1 * np.sin(2 * np.pi * x[..., 0]), G33, True)
    rep = minimize_energy(start, P2, proto(), SolveOptions(symmetry="odd", max_iters=50))
    v = rep.solution.values
    assert np.allclose(v, -v[::-1], atol=1e-14)


def test_splus_probe():
    rep = splus_probe(P2, 10, 0, G17)
    assert rep.passed and rep.min_pairing >= -1e-10


def test_disjoint_bumps():
    B = disjoint_bumps(G33, 3)
    assert B.shape == (3, 33)
    assert np.all((B != 0).sum(axis=0) <= 1)
    assert np.all(B[:, 0] == 0) and np.all(B[:, -1] == 0)


def test_subspace_negativity_and_negative_control():
    cut = cutoff_default(0.1, beta_default(P2, C_IMB), C_IMB)
    mod = modified_nonlinearity(proto(), cut, P2.p_minus, UNIT)
    ok = subspace_negativity(2, P2, mod, cut, G17, samples=30, const_samples=30)
    assert ok.passed and ok.t3_condition_met and ok.sup_sample < 0
    bad = subspace_negativity(1, P2, zero_nonlinearity(), cut, G17, samples=10, const_samples=10)
    assert not bad.passed


def test_multistart_finds_two_small_solutions():
    cut = cutoff_default(0.1, beta_default(P2, C_IMB), C_IMB)
    mod = modified_nonlinearity(proto(), cut, P2.p_minus, UNIT)
    sols = multistart_small_solutions(len(SIGN_PATTERNS), P2, mod, cut, 0, G33)
    nonzero = [s for s in sols if s.sup_norm > 1e-6 and s.genuine and s.report.converged]
    assert len(nonzero) >= 2
    for s in nonzero:
        assert s.report.diagnostics["weak_residual_max"] <= 1e-5
        assert s.energy < 0
