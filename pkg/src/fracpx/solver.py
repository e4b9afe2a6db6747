"""Energy functionals, the cut-off modification of the nonlinearity and descent solvers."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exponents import PairExponent, ScalarExponent, constant_scalar
from .grid import BoxDomain, Grid, GridFunction, interpolate, sup_norm
from .modular import cell_rule, l2_distance, luxemburg_norm
from .nonlocal_ops import gagliardo_seminorm, imbedding_ratio, random_pinned_function
from .pair_quadrature import get_quadrature

FD_REL_TOL = 1e-5


def _sgnpow(t, a):
    """sign(t) |t|^a, with 0 at t = 0."""
    return np.sign(t) * np.abs(t) ** a


# --- nonlinearities ----------------------------------------------------------


@dataclass(frozen=True)
class Nonlinearity:
    """f(x, t) with primitive F(x, t) = int_0^t f(x, tau) dtau.

    ``growth`` is (C, q) with |f(x, t)| <= C (1 + |t|^{q(x) - 1}); ``t0`` is
    the radius below which f is odd in t.
    """

    f: Callable[[np.ndarray, np.ndarray], np.ndarray]
    F: Callable[[np.ndarray, np.ndarray], np.ndarray]
    growth: tuple
    t0: float
    tag: str = "custom"
    params: dict = field(default_factory=dict)

    def validate(self, domain: BoxDomain, t_max: float = 2.0, n_x: int = 16, n_t: int = 201,
                 rel_tol: float = FD_REL_TOL) -> list:
        """Sampled checks of the growth bound, F' = f and oddness near 0. Returns violations."""
        out = []
        xs = Grid(domain, n_x).nodes
        t = np.linspace(-t_max, t_max, n_t)
        X = np.repeat(xs, t.size, axis=0)
        T = np.tile(t, xs.shape[0])
        fv = self.f(X, T)
        C, q = self.growth
        bound = C * (1.0 + np.abs(T) ** (q(X) - 1.0))
        if np.any(np.abs(fv) > bound * (1 + 1e-12)):
            out.append("growth bound |f| <= C(1 + |t|^{q-1}) fails")
        h = 1e-6 * np.maximum(1.0, np.abs(T))
        fd = (self.F(X, T + h) - self.F(X, T - h)) / (2 * h)
        scale = np.maximum(np.abs(fv), 1e-8)
        sel = np.abs(T) > 1e-3  # keep away from kinks of |t|^{r-2} t at 0
        if np.any(np.abs(fd - fv)[sel] > rel_tol * scale[sel] + 1e-9):
            out.append("dF/dt != f at sampled points")
        small = (np.abs(T) < self.t0) & (T != 0)
        if np.any(np.abs(self.f(X[small], -T[small]) + fv[small]) > 1e-12 * (1 + np.abs(fv[small]))):
            out.append("f is not odd in t below t0")
        return out


def zero_nonlinearity(dim: int = 1) -> Nonlinearity:
    return Nonlinearity(lambda x, t: np.zeros(np.shape(t)), lambda x, t: np.zeros(np.shape(t)),
                        (0.0, constant_scalar(2.0, dim)), np.inf, tag="zero")


def prototype_nonlinearity(lam: float, r: ScalarExponent, q: ScalarExponent) -> Nonlinearity:
    """f = lam |t|^{r(x)-2} t - |t|^{q(x)-2} t, sublinear-minus-superlinear."""
    if lam <= 0:
        raise ValueError("lam must be positive")

    def f(x, t):
        return lam * _sgnpow(t, r(x) - 1.0) - _sgnpow(t, q(x) - 1.0)

    def F(x, t):
        a = np.abs(t)
        rx, qx = r(x), q(x)
        return lam * a**rx / rx - a**qx / qx

    return Nonlinearity(f, F, (lam + 1.0, q), np.inf, tag="prototype",
                        params={"lam": float(lam), "r": r.name, "q": q.name})


# --- cut-off --------------------------------------------------------------------


def _smoothstep(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


def _smoothstep_d(tau):
    inside = (tau > 0.0) & (tau < 1.0)
    return np.where(inside, 30.0 * tau**2 * (1.0 - tau) ** 2, 0.0)


@dataclass(frozen=True)
class CutoffProfile:
    t2: float
    beta: float = 0.0
    c_imb: Optional[float] = None

    def rho(self, t):
        t = np.abs(np.asarray(t, dtype=float))
        return 1.0 - _smoothstep((t - self.t2) / self.t2)

    def drho(self, t):
        t = np.asarray(t, dtype=float)
        return -np.sign(t) * _smoothstep_d((np.abs(t) - self.t2) / self.t2) / self.t2

    def check(self, p_minus: float, p_plus: float, n: int = 4001) -> list:
        out = []
        t = np.linspace(-3 * self.t2, 3 * self.t2, n)
        r, dr = self.rho(t), self.drho(t)
        if np.any(r != self.rho(-t)):
            out.append("cutoff is not even")
        if np.any(r[np.abs(t) <= self.t2] != 1.0) or np.any(r[np.abs(t) >= 2 * self.t2] != 0.0):
            out.append("cutoff plateau conditions fail")
        if np.any(np.abs(dr) > 2.0 / self.t2):
            out.append("|rho'| exceeds 2/t2")
        if np.any(dr * t > 0):
            out.append("rho'(t) t > 0 somewhere")
        if self.c_imb is not None:
            cap = min(1.0 / p_minus, 1.0 / (p_plus * 2.0**p_minus * self.c_imb**p_minus))
            if not (0.0 < self.beta < cap):
                out.append(f"beta {self.beta:.6g} outside (0, {cap:.6g})")
        return out


def cutoff_default(t2: float, beta: float = 0.0, c_imb: Optional[float] = None) -> CutoffProfile:
    """Quintic smoothstep cut-off: 1 on |t| <= t2, 0 on |t| >= 2 t2, max |rho'| = 15/(8 t2)."""
    if t2 <= 0:
        raise ValueError("t2 must be positive")
    return CutoffProfile(float(t2), float(beta), c_imb)


def beta_default(p: PairExponent, c_imb: float, factor: float = 0.9) -> float:
    pm, pp = p.p_minus, p.p_plus
    return factor * min(1.0 / pm, 1.0 / (pp * 2.0**pm * c_imb**pm))


def estimate_c_imb(p: PairExponent, domain: BoxDomain, policy: str = "empirical", trials: int = 16,
                   seed: int = 0, nodes: Sequence[int] = (17, 33)) -> float:
    """Constant of W0 -> L^{p-}. ``rigorous`` uses the bound 2(1 + |Omega|)."""
    if policy == "rigorous":
        return 2.0 * (1.0 + domain.measure)
    if policy != "empirical":
        raise ValueError(f"unknown C_imb policy {policy!r}")
    rep = imbedding_ratio(p.trace_exponent(), constant_scalar(p.p_minus, p.dim), p, trials, seed,
                          domain=domain, nodes=nodes, region="full")
    return rep.max_ratio


class ModificationError(ValueError):
    """The modified nonlinearity violates p- F~ - f~ t >= 0 on the sample grid."""


def modified_nonlinearity(base: Nonlinearity, cut: CutoffProfile, p_minus: float, domain: Optional[BoxDomain] = None,
                          check: bool = True, n_x: int = 10, n_t: int = 100) -> Nonlinearity:
    """F~ = rho F + (1 - rho) beta |t|^{p-} and f~ = dF~/dt.

    With ``check`` the inequality p- F~ - f~ t >= 0 is verified on an
    (x, t) sample grid (``n_x`` points per axis times ``n_t`` values) and a
    violation aborts construction.
    """
    beta, pm = cut.beta, float(p_minus)

    def Ft(x, t):
        r = cut.rho(t)
        return r * base.F(x, t) + (1.0 - r) * beta * np.abs(t) ** pm

    def ft(x, t):
        r, dr = cut.rho(t), cut.drho(t)
        a = np.abs(t)
        return dr * base.F(x, t) + r * base.f(x, t) - dr * beta * a**pm + (1.0 - r) * beta * pm * _sgnpow(t, pm - 1.0)

    C, q = base.growth
    out = Nonlinearity(ft, Ft, (C, q), base.t0, tag=f"modified({base.tag})",
                       params={"base": base.tag, "t2": cut.t2, "beta": beta, "p_minus": pm})
    if check:
        if domain is None:
            raise ValueError("a domain is needed to check the modified nonlinearity")
        viol = modified_inequality_violations(out, pm, domain, cut.t2, n_x, n_t)
        if viol:
            raise ModificationError(viol[0])
    return out


def modified_inequality_violations(nl: Nonlinearity, p_minus: float, domain: BoxDomain, t2: float,
                                   n_x: int = 10, n_t: int = 100) -> list:
    xs = Grid(domain, n_x).nodes
    t = np.concatenate([-np.linspace(0, 3 * t2, n_t)[::-1], np.linspace(0, 3 * t2, n_t)[1:]])
    X = np.repeat(xs, t.size, axis=0)
    T = np.tile(t, xs.shape[0])
    g = p_minus * nl.F(X, T) - nl.f(X, T) * T
    scale = 1e-12 * (1.0 + np.abs(p_minus * nl.F(X, T)) + np.abs(nl.f(X, T) * T))
    bad = g < -scale
    if np.any(bad):
        k = int(np.argmax(bad))
        return [f"p- F~ - f~ t = {g[k]:.3g} < 0 at t = {T[k]:.4g}"]
    return []


# --- energies ---------------------------------------------------------------------


class Energy:
    """E(u) = Phi(u) - int F(x, u) on pinned nodal vectors.

    Phi holds the full-space Gagliardo energy and, when ``lower_order`` is
    set, the term int |u|^{p(x)}/p(x). Gradients are Euclidean nodal
    gradients with boundary entries set to 0.
    """

    def __init__(self, grid: Grid, p: PairExponent, nl: Optional[Nonlinearity] = None, lower_order: bool = True,
                 order: int = 2, **quad_opts):
        self.grid, self.p, self.nl, self.lower_order = grid, p, nl, lower_order
        self.Q = get_quadrature(grid, p, "full", **quad_opts)
        self.rule = cell_rule(grid, order)
        self.P0 = p.trace(self.rule.points)
        self.interior = grid.interior.astype(float)

    def parts(self, u) -> dict:
        u = np.asarray(u, dtype=float)
        uq = self.rule.basis @ u
        w = self.rule.weights
        out = {"gagliardo": self.Q.energy(u)}
        out["lower"] = float(np.sum(w * np.abs(uq) ** self.P0 / self.P0)) if self.lower_order else 0.0
        out["nonlinear"] = float(np.sum(w * self.nl.F(self.rule.points, uq))) if self.nl is not None else 0.0
        return out

    def phi(self, u) -> float:
        d = self.parts(u)
        return d["gagliardo"] + d["lower"]

    def value(self, u) -> float:
        d = self.parts(u)
        return d["gagliardo"] + d["lower"] - d["nonlinear"]

    def phi_gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        g = self.Q.gradient(u)
        if self.lower_order:
            uq = self.rule.basis @ u
            g = g + self.rule.basis.T @ (self.rule.weights * _sgnpow(uq, self.P0 - 1.0))
        return g * self.interior

    def gradient(self, u) -> np.ndarray:
        g = self.phi_gradient(u)
        if self.nl is not None:
            uq = self.rule.basis @ np.asarray(u, dtype=float)
            g = g - (self.rule.basis.T @ (self.rule.weights * self.nl.f(self.rule.points, uq))) * self.interior
        return g


def energy_phi(u: GridFunction, p: PairExponent, lower_order: bool = True, **quad_opts) -> float:
    return Energy(u.grid, p, None, lower_order, **quad_opts).phi(u.values)


def grad_phi(u: GridFunction, p: PairExponent, lower_order: bool = True, **quad_opts) -> np.ndarray:
    return Energy(u.grid, p, None, lower_order, **quad_opts).phi_gradient(u.values)


# --- descent --------------------------------------------------------------------


@dataclass
class SolveOptions:
    tol: float = 1e-6
    max_iters: int = 5000
    c1: float = 1e-4
    backtrack: float = 0.5
    initial_step: float = 1.0
    max_backtracks: int = 80
    lower_order: bool = True
    symmetry: Optional[str] = None  # None, "even" or "odd" about the box centre along axis 0


@dataclass
class SolveReport:
    solution: GridFunction
    energy_history: list
    residual_norm_history: list
    iterations: int
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def energy(self) -> float:
        return self.energy_history[-1]

    def to_dict(self, include_solution: bool = False) -> dict:
        d = {"energy_history": self.energy_history, "residual_norm_history": self.residual_norm_history,
             "iterations": self.iterations, "converged": self.converged, "energy": self.energy,
             "sup_norm": sup_norm(self.solution), "diagnostics": self.diagnostics}
        if include_solution:
            d["solution"] = self.solution.values.tolist()
        return d


def _projector(grid: Grid, symmetry: Optional[str]):
    if symmetry is None:
        return lambda v: v
    perm = grid.reflection_permutation(0)
    if symmetry == "even":
        return lambda v: 0.5 * (v + v[perm])
    if symmetry == "odd":
        return lambda v: 0.5 * (v - v[perm])
    raise ValueError(f"unknown symmetry {symmetry!r}")


def minimize_energy(start: GridFunction, p: PairExponent, nl: Optional[Nonlinearity] = None,
                    opts: Optional[SolveOptions] = None, energy: Optional[Energy] = None) -> SolveReport:
    """Armijo gradient descent on E(u) = Phi(u) - int F(x, u).

    The trial step of each iteration is twice the last accepted step (the
    first is ``initial_step``), then halved until sufficient decrease.
    Stops when the Euclidean norm of the nodal gradient drops below ``tol``.
    """
    opts = opts or SolveOptions()
    if not start.pinned:
        raise ValueError("minimize_energy needs a pinned start")
    E = energy or Energy(start.grid, p, nl, opts.lower_order)
    proj = _projector(start.grid, opts.symmetry)
    u = proj(start.values.copy())
    e = E.value(u)
    g = proj(E.gradient(u))
    gn = float(np.linalg.norm(g))
    eh, rh = [e], [gn]
    step = opts.initial_step
    it = 0
    status = "max_iters"
    while it < opts.max_iters:
        if gn < opts.tol:
            status = "converged"
            break
        trial = step
        accepted = False
        for _ in range(opts.max_backtracks):
            u_new = u - trial * g
            e_new = E.value(u_new)
            if e_new <= e - opts.c1 * trial * gn * gn:
                accepted = True
                break
            trial *= opts.backtrack
        if not accepted:
            status = "line_search_failed"
            break
        it += 1
        u, e = u_new, e_new
        g = proj(E.gradient(u))
        gn = float(np.linalg.norm(g))
        eh.append(e)
        rh.append(gn)
        step = min(2.0 * trial, 1e6)
    else:
        if gn < opts.tol:
            status = "converged"
    full_g = E.gradient(u)
    sol = GridFunction(start.grid, u, pinned=True)
    diag = {"status": status, "weak_residual_max": float(np.max(np.abs(full_g))),
            "full_gradient_norm": float(np.linalg.norm(full_g)), "symmetry": opts.symmetry}
    return SolveReport(sol, [float(v) for v in eh], [float(v) for v in rh], it, status == "converged", diag)


# --- (S+) probe -------------------------------------------------------------------


@dataclass
class ProbeReport:
    pairings: list
    min_pairing: float
    passed: bool
    threshold: float

    def to_dict(self) -> dict:
        return {"min_pairing": self.min_pairing, "passed": self.passed, "threshold": self.threshold,
                "trials": len(self.pairings)}


def splus_probe(p: PairExponent, trials: int, seed: int, grid: Optional[Grid] = None,
                threshold: float = -1e-10) -> ProbeReport:
    """<Phi'(u) - Phi'(v), u - v> over random pinned pairs; each must be >= threshold."""
    grid = grid or Grid(BoxDomain([(0.0, 1.0)] * p.dim), 17 if p.dim == 1 else 9)
    E = Energy(grid, p)
    rng = np.random.default_rng(seed)
    vals = []
    for _ in range(trials):
        a, b = (float(np.exp(rng.uniform(-2, 1))) for _ in range(2))
        u = a * interpolate(random_pinned_function(grid.domain, rng), grid, True).values
        v = b * interpolate(random_pinned_function(grid.domain, rng), grid, True).values
        vals.append(float((E.phi_gradient(u) - E.phi_gradient(v)) @ (u - v)))
    m = min(vals)
    return ProbeReport(vals, m, m >= threshold, threshold)


# --- subspace negativity -----------------------------------------------------------


def _bump_1d(t, a, b):
    """Smooth bump supported in (a, b) with maximum 1 at the centre."""
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    tau = (t - c) / h
    out = np.zeros_like(t)
    inside = np.abs(tau) < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - tau[inside] ** 2))
    return out


def disjoint_bumps(grid: Grid, n: int) -> np.ndarray:
    """n nodal vectors of smooth bumps on disjoint strips along axis 0, shape (n, size)."""
    lo, hi = grid.domain.lower, grid.domain.upper
    edges = np.linspace(lo[0], hi[0], n + 1)
    x = grid.nodes
    out = []
    for k in range(n):
        v = _bump_1d(x[:, 0], edges[k], edges[k + 1])
        for ax in range(1, grid.dim):
            v = v * _bump_1d(x[:, ax], lo[ax], hi[ax])
        v[grid.boundary_mask] = 0.0
        out.append(v)
    B = np.array(out)
    if np.any(np.max(np.abs(B), axis=1) == 0.0):
        raise ValueError("a bump has no interior node; refine the grid or lower n")
    return B


def w0_norm(u: GridFunction, p: PairExponent) -> float:
    """||u||_{L^{p(x)}} + [u] over the full space, the norm of the zero-extension space."""
    return luxemburg_norm(u, p.trace_exponent()).luxemburg_norm + gagliardo_seminorm(u, p, "full")


@dataclass
class SubspaceReport:
    n: int
    r_n: float
    C_n1: float
    C_n2: float
    t3: float
    t3_condition_met: bool
    sup_sample: float
    samples: int
    passed: bool
    max_sup_norm: float = 0.0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def find_t3(nl: Nonlinearity, p_minus: float, C_n2: float, t2: float, domain: BoxDomain, shrink: float = 0.5,
            max_steps: int = 60, n_x: int = 8, n_t: int = 64):
    """Largest t3 = t2 shrink^k with F(x, t) >= (2^{p-+1} C_n2^{p-}/p-) |t|^{p-} for sampled 0 < |t| <= t3."""
    xs = Grid(domain, n_x).nodes
    coef = 2.0 ** (p_minus + 1.0) * C_n2**p_minus / p_minus
    t3 = t2
    for _ in range(max_steps):
        t3 *= shrink
        mag = t3 * np.geomspace(1e-6, 1.0, n_t)
        t = np.concatenate([mag, -mag])
        X = np.repeat(xs, t.size, axis=0)
        T = np.tile(t, xs.shape[0])
        if np.all(nl.F(X, T) >= coef * np.abs(T) ** p_minus):
            return t3, True
    return t3, False


def subspace_negativity(n: int, p: PairExponent, nl: Nonlinearity, cut: CutoffProfile, grid: Grid,
                        samples: int = 200, seed: int = 0, const_samples: int = 200,
                        safety: float = 0.9) -> SubspaceReport:
    """Sample the modified energy on the sphere ||u|| = r_n of an n-bump subspace.

    C_n1, C_n2 come from random coefficient vectors, widened by ``safety``
    (C_n1 scaled down, C_n2 up) to offset sampling. ``nl`` must be the
    modified nonlinearity; the base F is only probed for t3 through it,
    which is valid because the two agree for |t| <= t2.
    """
    basis = disjoint_bumps(grid, n)
    rng = np.random.default_rng(seed)
    pm = p.p_minus
    pmin_exp = constant_scalar(pm, p.dim)

    def func(c):
        return GridFunction(grid, c @ basis, pinned=True)

    coeffs = np.vstack([np.eye(n), rng.standard_normal((const_samples, n))])
    r1, r2 = [], []
    for c in coeffs:
        u = func(c)
        nw = w0_norm(u, p)
        r1.append(nw / sup_norm(u))
        r2.append(nw / luxemburg_norm(u, pmin_exp).luxemburg_norm)
    C1, C2 = safety * min(r1), max(r2) / safety
    t3, ok = find_t3(nl, pm, C2, cut.t2, grid.domain)
    r_n = min(0.5, t3 * C1)
    E = Energy(grid, p, nl, lower_order=True)
    vals, sups = [], []
    for _ in range(samples):
        c = rng.standard_normal(n)
        u = func(c)
        u = u * (r_n / w0_norm(u, p))
        vals.append(E.value(u.values))
        sups.append(sup_norm(u))
    sup_val = float(max(vals))
    return SubspaceReport(n, float(r_n), float(C1), float(C2), float(t3), bool(ok), sup_val, samples,
                          bool(sup_val < 0.0), float(max(sups)))


# --- multistart ---------------------------------------------------------------------


SIGN_PATTERNS = ((1.0,), (1.0, -1.0), (1.0, -1.0, 1.0))


@dataclass
class SmallSolution:
    report: SolveReport
    sup_norm: float
    energy: float
    genuine: bool
    start_index: int

    def to_dict(self) -> dict:
        return {"sup_norm": self.sup_norm, "energy": self.energy, "genuine": self.genuine,
                "start_index": self.start_index, "converged": self.report.converged,
                "iterations": self.report.iterations,
                "weak_residual_max": self.report.diagnostics["weak_residual_max"]}


def _pattern_start(grid: Grid, signs: Sequence[float], amplitude: float) -> tuple[GridFunction, Optional[str]]:
    basis = disjoint_bumps(grid, len(signs))
    v = amplitude * (np.asarray(signs) @ basis)
    # palindromic sign patterns are even about the centre, antipalindromic ones odd
    if tuple(signs) == tuple(signs[::-1]):
        sym = "even"
    elif tuple(signs) == tuple(-s for s in signs[::-1]):
        sym = "odd"
    else:
        sym = None
    return GridFunction(grid, v, pinned=True), sym


def multistart_small_solutions(starts: int, p: PairExponent, nl: Nonlinearity, cut: CutoffProfile, seed: int,
                               grid: Grid, opts: Optional[SolveOptions] = None, amplitude: Optional[float] = None,
                               threads: int = 1, dedup_tol: float = 1e-4,
                               use_symmetry: bool = True) -> list[SmallSolution]:
    """Minimise the modified energy from bump starts of decreasing amplitude.

    Start k uses sign pattern k mod 3 and amplitude A 2^{-k/3} times a seeded
    jitter in [0.9, 1.1]. With ``use_symmetry`` the descent stays in the
    parity subspace of its start, so antisymmetric starts reach sign-changing
    critical points. Solutions closer than ``dedup_tol`` in L^2 to an
    earlier one (or its negative) are merged; the zero solution is kept once.
    """
    opts = opts or SolveOptions()
    amp0 = amplitude if amplitude is not None else 2.0 * cut.t2
    rng = np.random.default_rng(seed)
    jitter = rng.uniform(0.9, 1.1, starts)
    E = Energy(grid, p, nl, opts.lower_order)
    jobs = []
    for k in range(starts):
        signs = SIGN_PATTERNS[k % len(SIGN_PATTERNS)]
        start, sym = _pattern_start(grid, signs, amp0 * 2.0 ** (-k / 3.0) * jitter[k])
        o = SolveOptions(**{**opts.__dict__, "symmetry": sym if use_symmetry else None})
        jobs.append((k, start, o))

    def run(job):
        k, start, o = job
        return k, minimize_energy(start, p, nl, o, energy=E)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    results.sort(key=lambda kr: kr[0])

    found: list[SmallSolution] = []
    for k, rep in results:
        u = rep.solution
        dup = False
        for other in found:
            v = other.report.solution
            if min(l2_distance(u, v), l2_distance(u, -v)) <= dedup_tol:
                dup = True
                break
        if not dup:
            sn = sup_norm(u)
            found.append(SmallSolution(rep, sn, rep.energy, bool(sn <= cut.t2), k))
    return found
