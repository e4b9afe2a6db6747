"""Variable-exponent Gagliardo modular, seminorm, combined norms and the operator's weak form.

``region="omega"`` integrates over the box squared. ``region="full"`` covers
all pairs except both points outside, which is where the zero extension
contributes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .exponents import ExponentError, PairExponent, ScalarExponent, critical_exponent
from .grid import BoxDomain, Grid, GridFunction, interpolate
from .modular import ASSERT_TOL, BISECTION_TOL, cell_rule, luxemburg_norm, luxemburg_root
from .pair_quadrature import get_quadrature

EQUIV_TOL = 1e-6


def gagliardo_modular(u: GridFunction, p: PairExponent, region: str = "omega", **quad_opts) -> float:
    return get_quadrature(u.grid, p, region, **quad_opts).modular(u.values)


def gagliardo_seminorm(u: GridFunction, p: PairExponent, region: str = "omega", tol: float = BISECTION_TOL,
                       **quad_opts) -> float:
    """inf{lam > 0 : modular(u / lam) < 1}; 0 when the modular vanishes."""
    Q = get_quadrature(u.grid, p, region, **quad_opts)
    f = Q.modular_of_scale(u.values)
    if f(1.0) == 0.0:
        return 0.0
    scale = max(float(np.max(np.abs(u.values))), 1e-300)
    return luxemburg_root(f, scale, tol)[0]


@dataclass
class SeminormReport:
    gagliardo_modular: float
    seminorm: float
    combined_modular: float
    norm_sum: float
    norm_luxemburg: float
    lebesgue_norm: float = 0.0
    unit_residual: float = 0.0
    assertions: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.assertions

    def to_dict(self) -> dict:
        return asdict(self)


def combined_modular_of_scale(u: GridFunction, q: ScalarExponent, p: PairExponent, region: str = "omega",
                              order: int = 2, **quad_opts):
    """lam -> int |u/lam|^q + Gagliardo modular of u/lam."""
    Q = get_quadrature(u.grid, p, region, **quad_opts)
    g = Q.modular_of_scale(u.values)
    rule = cell_rule(u.grid, order)
    uq = rule.basis @ u.values
    qq = np.broadcast_to(q(rule.points), uq.shape)
    w = rule.weights
    return lambda lam: float(np.sum(w * np.abs(uq / lam) ** qq)) + g(lam)


def combined_norms(u: GridFunction, q: ScalarExponent, p: PairExponent, region: str = "omega",
                   order: int = 2, equiv_tol: float = EQUIV_TOL, rel_tol: float = ASSERT_TOL,
                   **quad_opts) -> SeminormReport:
    """Sum norm ||u||_L^q + [u] and the Luxemburg norm of the combined modular.

    Records violations of the unit-modular characterisation, the sign
    relation, the power relations (with exponents spanning both q and p) and
    the two-sided equivalence 0.5 ||u|| <= |u| <= 2 ||u||.
    """
    Q = get_quadrature(u.grid, p, region, **quad_opts)
    gm = Q.modular(u.values)
    rho_fn = combined_modular_of_scale(u, q, p, region, order, **quad_opts)
    rho = rho_fn(1.0)
    ln = luxemburg_norm(u, q, order).luxemburg_norm
    if rho == 0.0:
        return SeminormReport(gm, 0.0, 0.0, ln, 0.0, ln)
    semi = gagliardo_seminorm(u, p, region, **quad_opts) if gm > 0 else 0.0
    scale = max(float(np.max(np.abs(u.values))), 1e-300)
    lam, _, res = luxemburg_root(rho_fn, scale)
    norm_sum = ln + semi
    rep = SeminormReport(gm, semi, rho, norm_sum, lam, ln, res)
    if res > BISECTION_TOL:
        rep.assertions.append(f"unit modular residual {res:.3g} exceeds {BISECTION_TOL}")
    if (lam > 1 + rel_tol and rho < 1 - rel_tol) or (lam < 1 - rel_tol and rho > 1 + rel_tol):
        rep.assertions.append(f"sign mismatch: norm {lam:.12g}, modular {rho:.12g}")
    rule = cell_rule(u.grid, order)
    qv = q(rule.points)
    e_lo = min(float(np.min(qv)), p.p_minus)
    e_hi = max(float(np.max(qv)), p.p_plus)
    lo_e, hi_e = (e_lo, e_hi) if lam >= 1 else (e_hi, e_lo)
    if not (lam**lo_e * (1 - rel_tol) <= rho <= lam**hi_e * (1 + rel_tol)):
        rep.assertions.append(f"modular {rho:.12g} outside [{lam**lo_e:.12g}, {lam**hi_e:.12g}]")
    if not (0.5 * norm_sum * (1 - equiv_tol) <= lam <= 2.0 * norm_sum * (1 + equiv_tol)):
        rep.assertions.append(f"equivalence fails: |u| = {lam:.12g}, ||u|| = {norm_sum:.12g}")
    return rep


def weak_form(u: GridFunction, v: GridFunction, p: PairExponent, region: str = "full", **quad_opts) -> float:
    """Double integral of |du|^{p-2} du dv |x-y|^{-N-sp} with du = u(x)-u(y), dv = v(x)-v(y)."""
    if u.grid != v.grid:
        raise ValueError("u and v live on different grids")
    return get_quadrature(u.grid, p, region, **quad_opts).weak(u.values, v.values)


# --- strong form --------------------------------------------------------------


@dataclass
class StrongFormReport:
    point: list
    eps: list
    values: list
    extrapolated: float
    converged: bool

    @property
    def value(self) -> float:
        return self.extrapolated

    def to_dict(self) -> dict:
        return asdict(self)


def _ray_exit(x: np.ndarray, theta: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        t_hi = np.where(theta > 0, (hi - x) / theta, np.inf)
        t_lo = np.where(theta < 0, (lo - x) / theta, np.inf)
    return np.min(np.minimum(t_hi, t_lo), axis=-1)


def strong_form_diagnostic(u: GridFunction, p: PairExponent, x, eps_sequence: Sequence[float],
                           n_theta: int = 128, panels_per_decade: int = 6, gauss: int = 6) -> StrongFormReport:
    """2 * int_{|y-x| > eps} phi(u(x) - u(y)) |x-y|^{-N-sp(x,y)} dy for each eps, then Aitken extrapolation.

    Rays from x carry log-spaced Gauss panels up to the box exit and the
    analytic tail beyond it with the exponent frozen at p(x, x). The result
    is flagged as not converged when successive differences grow.
    """
    grid = u.grid
    N = grid.dim
    x = np.asarray(x, dtype=float).reshape(N)
    lo, hi = grid.domain.lower, grid.domain.upper
    if not (np.all(x > lo) and np.all(x < hi)):
        raise ValueError("strong form diagnostic needs an interior point")
    eps_list = [float(e) for e in eps_sequence]
    if any(e <= 0 for e in eps_list) or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_sequence must be positive and strictly decreasing")
    if N == 1:
        theta = np.array([[1.0], [-1.0]])
        tw = np.ones(2)
    else:
        ang = 2 * np.pi * (np.arange(n_theta) + 0.5) / n_theta
        theta = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        tw = np.full(n_theta, 2 * np.pi / n_theta)
    exit_r = _ray_exit(x, theta, lo, hi)
    ux = float(u(x[None, :])[0]) if N > 1 else float(u(x[0]))
    g, gw = np.polynomial.legendre.leggauss(gauss)
    P0 = float(p.trace(x[None, :])[0])
    s = p.s
    phi_x = np.sign(ux) * abs(ux) ** (P0 - 1.0)

    values = []
    for eps in eps_list:
        total = 0.0
        for th, w_th, R in zip(theta, tw, exit_r):
            if R > eps:
                n_pan = max(1, int(np.ceil(panels_per_decade * np.log10(R / eps))))
                edges = np.log(eps) + (np.log(R) - np.log(eps)) * np.arange(n_pan + 1) / n_pan
                mids = 0.5 * (edges[1:] + edges[:-1])
                half = 0.5 * np.diff(edges)
                t = (mids[:, None] + half[:, None] * g[None, :]).ravel()
                wt = (half[:, None] * gw[None, :]).ravel()
                r = np.exp(t)
                y = x + r[:, None] * th
                uy = u.grid.interpolation_matrix(np.clip(y, lo, hi)) @ u.values
                P = p(np.broadcast_to(x, y.shape), y)
                d = ux - uy
                # r^{N-1} r^{-N-sP} dr = r^{-sP} dt with r = e^t
                total += w_th * float(np.sum(wt * np.sign(d) * np.abs(d) ** (P - 1.0) * r ** (-s * P)))
            start = max(R, eps)
            total += w_th * phi_x * start ** (-s * P0) / (s * P0)
        values.append(float(2.0 * total))

    converged = True
    if len(values) >= 3:
        diffs = np.abs(np.diff(values))
        floor = 1e-12 * max(1.0, float(np.max(np.abs(values))))
        converged = bool(np.all(diffs[1:] <= diffs[:-1] * (1 + 1e-12) + floor))
        a, b, c = values[-3:]
        den = c - 2 * b + a
        extrap = c - (c - b) ** 2 / den if converged and abs(den) > floor else c
    else:
        extrap = values[-1]
    return StrongFormReport(x.tolist(), eps_list, values, float(extrap), converged)


# --- imbedding ratio -----------------------------------------------------------


def random_pinned_function(domain: BoxDomain, rng: np.random.Generator, modes: int = 6):
    """Random smooth function vanishing on the box boundary: decaying sine series."""
    N = domain.dim
    lo, hi = domain.lower, domain.upper
    ks = [np.arange(1, modes + 1)] * N
    kk = np.stack(np.meshgrid(*ks, indexing="ij"), -1).reshape(-1, N)
    amp = rng.standard_normal(kk.shape[0]) / np.prod(kk, axis=-1).astype(float)
    if np.all(amp == 0):
        amp[0] = 1.0

    def g(x):
        t = (x - lo) / (hi - lo)
        return np.sum(amp * np.prod(np.sin(np.pi * kk[None, :, :] * t[:, None, :]), axis=-1), axis=-1)

    return g


@dataclass
class ImbeddingReport:
    max_ratio: float
    per_trial: list
    per_level: list
    nodes: list
    growth: list
    stable: bool
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def imbedding_ratio(q: ScalarExponent, r: ScalarExponent, p: PairExponent, trials: int, seed: int,
                    domain: Optional[BoxDomain] = None, nodes: Sequence[int] = (17, 33), region: str = "omega",
                    max_growth: float = 0.10, **quad_opts) -> ImbeddingReport:
    """Empirical lower bound on the constant of ||u||_{L^r} <= C ||u||_{s,q,p}.

    The same random pinned functions are sampled on each resolution in
    ``nodes``; the maximal ratio may grow by less than ``max_growth`` per
    refinement. For s p(x,x) >= N every finite r is subcritical.
    """
    if trials <= 0:
        raise ValueError("trials must be positive")
    domain = domain or BoxDomain([(0.0, 1.0)] * p.dim)
    probe = Grid(domain, 33).nodes
    if np.any(q(probe) < p.trace(probe) - 1e-12):
        raise ExponentError("imbedding ratio needs q(x) >= p(x, x)")
    pt = p.trace(probe)
    sub = p.s * pt < p.dim
    crit = np.full(pt.shape, np.inf)
    if np.any(sub):
        crit[sub] = critical_exponent(p, probe[sub])
    if np.any(r(probe) >= crit):
        raise ExponentError("imbedding ratio needs r(x) below the critical exponent")
    rng = np.random.default_rng(seed)
    funcs = [random_pinned_function(domain, rng) for _ in range(trials)]
    per_level, per_trial_all = [], []
    for n in nodes:
        grid = Grid(domain, n)
        ratios = []
        for g in funcs:
            u = interpolate(g, grid, pin_boundary=True)
            num = luxemburg_norm(u, r).luxemburg_norm
            den = luxemburg_norm(u, q).luxemburg_norm + gagliardo_seminorm(u, p, region, **quad_opts)
            ratios.append(num / den)
        per_trial_all.append(ratios)
        per_level.append(float(max(ratios)))
    growth = [(b - a) / a for a, b in zip(per_level, per_level[1:])]
    stable = all(gr < max_growth for gr in growth) and all(np.isfinite(per_level))
    rep = ImbeddingReport(per_level[-1], per_trial_all[-1], per_level, list(nodes), growth, stable)
    if not stable:
        rep.violations.append(f"ratio growth {growth} exceeds {max_growth} per refinement")
    return rep
