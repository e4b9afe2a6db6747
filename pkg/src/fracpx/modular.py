"""Lebesgue modulars, Luxemburg norms and the basic variable-exponent inequalities."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .exponents import ScalarExponent
from .grid import Grid, GridFunction

BISECTION_TOL = 1e-10
ASSERT_TOL = 1e-8
MAX_BRACKET_DOUBLINGS = 200
MAX_BISECTION_ITERS = 400


class BracketError(RuntimeError):
    """The modular never crossed 1 while the bracket was expanded."""


@dataclass(frozen=True)
class CellRule:
    points: np.ndarray
    weights: np.ndarray
    cell: np.ndarray
    basis: sp.csr_matrix  # values at points = basis @ nodal values


@lru_cache(maxsize=32)
def cell_rule(grid: Grid, order: int = 2) -> CellRule:
    """Per-cell tensor Gauss rule with its interpolation matrix (cached per grid)."""
    pts, w, cell = grid.cell_quadrature(order)
    B = grid.interpolation_matrix(pts)
    for a in (pts, w, cell):
        a.setflags(write=False)
    return CellRule(pts, w, cell, B)


@dataclass
class CheckReport:
    """Values computed by a check and the violated relations, if any."""

    name: str
    values: dict = field(default_factory=dict)
    violations: list = field(default_factory=list)
    skipped: bool = False

    @property
    def passed(self) -> bool:
        return not self.violations and not self.skipped

    def to_dict(self) -> dict:
        return {"name": self.name, "values": _jsonable(self.values), "violations": list(self.violations),
                "skipped": self.skipped, "passed": self.passed}


def _jsonable(d):
    if isinstance(d, dict):
        return {k: _jsonable(v) for k, v in d.items()}
    if isinstance(d, (list, tuple)):
        return [_jsonable(v) for v in d]
    if isinstance(d, np.generic):
        return d.item()
    if isinstance(d, np.ndarray):
        return d.tolist()
    return d


@dataclass
class ModularReport:
    modular_value: float
    luxemburg_norm: float
    bisection_iters: int
    residual: float
    assertions: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"modular": self.modular_value, "norm": self.luxemburg_norm, "iters": self.bisection_iters,
                "residual": self.residual, "assertions": list(self.assertions)}


def luxemburg_root(modular_of_scale: Callable[[float], float], scale: float, tol: float = BISECTION_TOL,
                   max_doublings: int = MAX_BRACKET_DOUBLINGS) -> tuple[float, int, float]:
    """Solve modular(u / lam) = 1 for lam by bracketed bisection.

    ``modular_of_scale(lam)`` must be strictly decreasing in lam. The bracket
    starts at [scale/10, 10*scale] and is doubled outward until it straddles 1.
    Returns (lam, iterations, |modular(u/lam) - 1|).
    """
    lo, hi = scale / 10.0, scale * 10.0
    f_lo, f_hi = modular_of_scale(lo), modular_of_scale(hi)
    n = 0
    while f_lo < 1.0:
        n += 1
        if n > max_doublings:
            raise BracketError("lower bracket expansion failed; data may be non-finite")
        lo /= 2.0
        f_lo = modular_of_scale(lo)
    n = 0
    while f_hi > 1.0:
        n += 1
        if n > max_doublings or not np.isfinite(f_hi):
            raise BracketError("upper bracket expansion failed; data may be non-finite")
        hi *= 2.0
        f_hi = modular_of_scale(hi)
    it = 0
    mid, f_mid = hi, f_hi
    while it < MAX_BISECTION_ITERS:
        it += 1
        mid = 0.5 * (lo + hi)
        f_mid = modular_of_scale(mid)
        if abs(f_mid - 1.0) <= tol or mid in (lo, hi):
            break
        if f_mid > 1.0:
            lo = mid
        else:
            hi = mid
    return float(mid), it, float(abs(f_mid - 1.0))


def _quad_values(u: GridFunction, q: ScalarExponent | None, order: int):
    rule = cell_rule(u.grid, order)
    uq = rule.basis @ u.values
    qq = None if q is None else np.broadcast_to(q(rule.points), uq.shape)
    return rule, uq, qq


def _modular_from(uq, qq, w, lam: float = 1.0) -> float:
    return float(np.sum(w * np.abs(uq / lam) ** qq))


def lebesgue_modular(u: GridFunction, q: ScalarExponent, order: int = 2) -> float:
    """Quadrature value of the integral of |u|^q(x) over the box."""
    rule, uq, qq = _quad_values(u, q, order)
    return _modular_from(uq, qq, rule.weights)


def luxemburg_norm(u: GridFunction, q: ScalarExponent, order: int = 2, tol: float = BISECTION_TOL) -> ModularReport:
    rule, uq, qq = _quad_values(u, q, order)
    w = rule.weights
    rho = _modular_from(uq, qq, w)
    nz = uq != 0.0
    if not np.any(nz):
        return ModularReport(0.0, 0.0, 0, 0.0)
    uq, qq, w = uq[nz], qq[nz], w[nz]
    lam, it, res = luxemburg_root(lambda lam: _modular_from(uq, qq, w, lam), float(np.max(np.abs(uq))), tol)
    return ModularReport(rho, lam, it, res)


def check_norm_modular_relations(u: GridFunction, q: ScalarExponent, order: int = 2,
                                 rel_tol: float = ASSERT_TOL) -> CheckReport:
    """Norm-modular relations with q- and q+ taken over the quadrature points."""
    rule, _, qq = _quad_values(u, q, order)
    rep = luxemburg_norm(u, q, order)
    rho, lam = rep.modular_value, rep.luxemburg_norm
    qmin, qmax = float(qq.min()), float(qq.max())
    out = CheckReport("norm_modular", {"modular": rho, "norm": lam, "q_minus": qmin, "q_plus": qmax,
                                       "residual": rep.residual, "iters": rep.bisection_iters})
    if lam == 0.0:
        if rho != 0.0:
            out.violations.append("zero norm with nonzero modular")
        return out
    if rep.residual > BISECTION_TOL:
        out.violations.append(f"unit modular residual {rep.residual:.3g} exceeds {BISECTION_TOL}")
    # sign(rho - 1) = sign(lam - 1), with a tolerance band around 1
    if (lam > 1 + rel_tol and rho < 1 - rel_tol) or (lam < 1 - rel_tol and rho > 1 + rel_tol):
        out.violations.append(f"sign mismatch: norm {lam:.12g}, modular {rho:.12g}")
    lo_e, hi_e = (qmin, qmax) if lam > 1 else (qmax, qmin)
    lower, upper = lam**lo_e, lam**hi_e
    if rho < lower * (1 - rel_tol):
        out.violations.append(f"modular {rho:.12g} below norm power {lower:.12g}")
    if rho > upper * (1 + rel_tol):
        out.violations.append(f"modular {rho:.12g} above norm power {upper:.12g}")
    out.values.update({"lower_bound": lower, "upper_bound": upper})
    return out


def holder_pairing(u: GridFunction, v: GridFunction, q: ScalarExponent, order: int = 2,
                   rel_tol: float = ASSERT_TOL) -> CheckReport:
    """|int uv| <= 2 ||u||_q ||v||_q' with q' the pointwise conjugate."""
    if q.lower <= 1.0:
        raise ValueError("Hoelder pairing needs q- > 1")
    rule = cell_rule(u.grid, order)
    pairing = abs(float(np.sum(rule.weights * (rule.basis @ u.values) * (rule.basis @ v.values))))
    nu = luxemburg_norm(u, q, order).luxemburg_norm
    nv = luxemburg_norm(v, q.conjugate(), order).luxemburg_norm
    bound = 2.0 * nu * nv
    out = CheckReport("holder", {"pairing": pairing, "norm_u": nu, "norm_v_conjugate": nv, "bound": bound})
    if pairing > bound * (1 + rel_tol) + 1e-300:
        out.violations.append(f"|int uv| = {pairing:.12g} exceeds 2||u|| ||v|| = {bound:.12g}")
    return out


def exponent_comparison(u: GridFunction, alpha: ScalarExponent, beta: ScalarExponent,
                        measure: float | None = None, order: int = 2, rel_tol: float = ASSERT_TOL) -> CheckReport:
    """||u||_alpha <= 2(1 + |Omega|) ||u||_beta whenever alpha <= beta."""
    rule = cell_rule(u.grid, order)
    measure = u.grid.domain.measure if measure is None else float(measure)
    out = CheckReport("exponent_comparison", {"measure": measure})
    if np.any(alpha(rule.points) > beta(rule.points) + 1e-14):
        out.violations.append("precondition alpha <= beta fails at sampled points; check skipped")
        out.skipped = True
        return out
    na = luxemburg_norm(u, alpha, order).luxemburg_norm
    nb = luxemburg_norm(u, beta, order).luxemburg_norm
    bound = 2.0 * (1.0 + measure) * nb
    out.values.update({"norm_alpha": na, "norm_beta": nb, "bound": bound})
    if na > bound * (1 + rel_tol):
        out.violations.append(f"||u||_alpha = {na:.12g} exceeds {bound:.12g}")
    return out


def integrate(u: GridFunction, order: int = 2) -> float:
    rule = cell_rule(u.grid, order)
    return float(np.sum(rule.weights * (rule.basis @ u.values)))


def l2_distance(u: GridFunction, v: GridFunction, order: int = 2) -> float:
    rule = cell_rule(u.grid, order)
    d = rule.basis @ (u.values - v.values)
    return float(np.sqrt(np.sum(rule.weights * d * d)))
