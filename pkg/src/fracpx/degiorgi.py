"""De Giorgi level truncation on computed functions, plus the worst-case recursion it is compared against."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import mpmath
import numpy as np

from .exponents import ScalarExponent
from .grid import GridFunction, sup_norm
from .modular import cell_rule, lebesgue_modular, luxemburg_norm

MP_DIGITS = 50
DIVERGED_LOG10 = 100.0


@dataclass(frozen=True)
class RecursionParams:
    K: float
    b: float
    delta1: float
    delta2: float

    def __post_init__(self):
        if not (self.K > 0 and self.b > 1 and 0 < self.delta1 <= self.delta2):
            raise ValueError(f"need K > 0, b > 1, 0 < delta1 <= delta2; got {self}")


def levels(k_star: float, n_max: int) -> np.ndarray:
    """k_n = k*(2 - 2^{-n}) for n = 0..n_max."""
    if k_star <= 0:
        raise ValueError("k_star must be positive")
    n = np.arange(n_max + 1)
    return k_star * (2.0 - 2.0 ** (-n.astype(float)))


def level_functional(u: GridFunction, q: ScalarExponent, k: float, order: int = 2) -> dict:
    """Z = int_{u > k} (u - k)^q and |{u > k}|, with the indicator taken at quadrature points."""
    if k < 0:
        raise ValueError("level k must be nonnegative")
    rule = cell_rule(u.grid, order)
    uq = rule.basis @ u.values
    above = uq > k
    qq = np.broadcast_to(q(rule.points), uq.shape)
    Z = float(np.sum(rule.weights[above] * (uq[above] - k) ** qq[above]))
    return {"Z": Z, "measure": float(np.sum(rule.weights[above]))}


def recursion_threshold(params: RecursionParams) -> dict:
    K, b, d1, d2 = params.K, params.b, params.delta1, params.delta2
    y0 = (2 * K) ** (-1 / d1) * b ** (-1 / d1**2)
    alt = (2 * K) ** (-1 / d2) * b ** (-1 / (d1 * d2) - (d2 - d1) / d2**2)
    return {"thr_a": float(min(1.0, y0)), "thr_b": float(min(y0, alt))}


@dataclass
class RecursionTrace:
    params: RecursionParams
    Z0: float
    log10_Z: list
    verdict: str
    n0: Optional[int]
    hypothesis: bool
    tail_bound_ok: Optional[bool]
    tail_violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"params": self.params.__dict__, "Z0": self.Z0, "log10_Z": self.log10_Z, "verdict": self.verdict,
                "n0": self.n0, "hypothesis": self.hypothesis, "tail_bound_ok": self.tail_bound_ok,
                "tail_violations": self.tail_violations}


def _as_params(params) -> RecursionParams:
    if isinstance(params, RecursionParams):
        return params
    # plain tuples may sit on the boundary b = 1, where the worst case is still well defined
    K, b, d1, d2 = (float(v) for v in params)
    if b == 1.0:
        obj = object.__new__(RecursionParams)
        for k, v in zip(("K", "b", "delta1", "delta2"), (K, b, d1, d2)):
            object.__setattr__(obj, k, v)
        if not (K > 0 and 0 < d1 <= d2):
            raise ValueError("need K > 0 and 0 < delta1 <= delta2")
        return obj
    return RecursionParams(K, b, d1, d2)


def simulate_recursion(params, Z0: float, n_max: int = 60) -> RecursionTrace:
    """Iterate the worst case Z_{n+1} = K b^n (Z_n^{1+d1} + Z_n^{1+d2}) in 50-digit arithmetic.

    verdict is "converged" when the trace falls below 1 and keeps decreasing,
    "diverged" once Z_n exceeds 1e100 or the final steps still grow, and
    "undetermined" otherwise. When Z0 meets one of the two thresholds the
    closed-form tail bound is checked for every n >= n0. ``params`` may
    also be a (K, b, delta1, delta2) tuple, which admits b = 1.
    """
    if Z0 <= 0:
        raise ValueError("Z0 must be positive")
    params = _as_params(params)
    with mpmath.workdps(MP_DIGITS):
        K, b = mpmath.mpf(params.K), mpmath.mpf(params.b)
        d1, d2 = mpmath.mpf(params.delta1), mpmath.mpf(params.delta2)
        Z = [mpmath.mpf(Z0)]
        verdict = "undetermined"
        for n in range(n_max):
            z = Z[-1]
            nxt = K * b**n * (z ** (1 + d1) + z ** (1 + d2))
            Z.append(nxt)
            if mpmath.log10(nxt) > DIVERGED_LOG10:
                verdict = "diverged"
                break
        logs = [float(mpmath.log10(z)) for z in Z]
        if verdict != "diverged":
            tail = logs[-5:]
            if Z[-1] <= 1 and all(a > c for a, c in zip(tail, tail[1:])):
                verdict = "converged"
            elif all(a < c for a, c in zip(tail, tail[1:])) and Z[-1] > 1:
                verdict = "diverged"
        thr = recursion_threshold(params)
        hyp = bool(Z0 <= thr["thr_a"] or Z0 <= thr["thr_b"])
        n0 = next((i for i, z in enumerate(Z) if z <= 1), None)
        tail_ok = None
        viol = []
        if hyp and n0 is not None:
            c = (2 * K) ** (-1 / d1) * b ** (-1 / d1**2)
            slack = mpmath.mpf(10) ** (-(MP_DIGITS - 10))
            for i in range(n0, len(Z)):
                bound = min(mpmath.mpf(1), c * b ** (-mpmath.mpf(i) / d1))
                if Z[i] > bound * (1 + slack):
                    viol.append(i)
            tail_ok = not viol
    return RecursionTrace(params, float(Z0), logs, verdict, n0, hyp, tail_ok, viol)


def kstar_select(C16: float, gamma1: float, gamma2: float, delta1: float, delta2: float, b: float,
                 modular_q: float) -> dict:
    """k* = max{(4C)^{1/g1}, (4C)^{1/g2}} b^{(1/g1)(1/d1 + (d2-d1)/d2)} max{M^{d1/g2}, M^{d2/g1}}.

    The returned dict also re-checks the two-line system on k*^{-g1} + k*^{-g2}
    that the choice is meant to guarantee.
    """
    M = float(modular_q)
    if M <= 0:
        raise ValueError("modular_q must be positive; the zero function needs no bound")
    if min(C16, gamma1, gamma2, delta1, delta2) <= 0 or b <= 1 or gamma2 < gamma1 or delta2 < delta1:
        raise ValueError("need positive constants, b > 1, gamma2 >= gamma1 and delta2 >= delta1")
    e = (1 / delta1 + (delta2 - delta1) / delta2)
    k = (max((4 * C16) ** (1 / gamma1), (4 * C16) ** (1 / gamma2)) * b ** (e / gamma1)
         * max(M ** (delta1 / gamma2), M ** (delta2 / gamma1)))
    lhs = k ** (-gamma1) + k ** (-gamma2)
    rhs1 = b ** (-1 / delta1) * M ** (-delta1) / (2 * C16)
    rhs2 = b ** (-e) * M ** (-delta2) / (2 * C16)
    ok = lhs <= rhs1 * (1 + 1e-12) and lhs <= rhs2 * (1 + 1e-12)
    return {"k_star": float(k), "lhs": float(lhs), "rhs": [float(rhs1), float(rhs2)], "system_ok": bool(ok)}


# --- traces on computed functions -----------------------------------------------------


@dataclass
class LevelRecord:
    n: int
    k: float
    measure: float
    Z: float


@dataclass
class DeGiorgiTrace:
    k_star: float
    side: str
    records: list
    fitted_K: Optional[float]
    fitted_b: Optional[float]
    vanish_level: Optional[int]
    sup_norm: float
    violations: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        if self.vanish_level is None:
            return "does not vanish by n_max"
        return f"vanishes at level {self.vanish_level}"

    @property
    def Z(self) -> np.ndarray:
        return np.array([r.Z for r in self.records])

    def to_dict(self) -> dict:
        return {"k_star": self.k_star, "side": self.side, "fitted_K": self.fitted_K, "fitted_b": self.fitted_b,
                "vanish_level": self.vanish_level, "verdict": self.verdict, "sup_norm": self.sup_norm, "violations": list(self.violations),
                "levels": [r.__dict__ for r in self.records]}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "k_n", "measure", "Z_n"])
        for r in self.records:
            w.writerow([r.n, repr(r.k), repr(r.measure), repr(r.Z)])
        return buf.getvalue()


def _fit_recursion(Z: np.ndarray, d1: float, d2: float):
    """Envelope (K, b) with Z_{n+1} <= K b^n (Z_n^{1+d1} + Z_n^{1+d2}) on all observed levels."""
    n = np.arange(Z.size - 1)
    den = Z[:-1] ** (1 + d1) + Z[:-1] ** (1 + d2)
    sel = (Z[:-1] > 0) & (Z[1:] > 0)
    if not np.any(sel):
        return None, None
    ratio = np.log(Z[1:][sel] / den[sel])
    ns = n[sel]
    slope = np.polyfit(ns, ratio, 1)[0] if ns.size >= 2 else 0.0
    b = float(max(np.exp(slope), 1.0 + 1e-9))
    K = float(np.max(np.exp(ratio) / b**ns))
    return K, b


def degiorgi_on_solution(u: GridFunction, q: ScalarExponent, k_star: float, n_max: int = 30,
                         delta1: float = 0.1, delta2: float = 0.1, negative: bool = False,
                         order: int = 2) -> DeGiorgiTrace:
    """Level trace of u (or of -u when ``negative``) with the per-level checks.

    Recorded violations: Z increasing in n, Z nonzero at a level above
    sup_norm, and the two level estimates
    int_{A_{k_{n+1}}} u^q <= 2^{(n+2) q+} Z_n and
    |A_{k_{n+1}}| <= 2 (1 + k*^{-q+}) 2^{(n+1) q+} Z_n.
    """
    w = -u if negative else u
    ks = levels(k_star, n_max)
    recs = []
    for i, k in enumerate(ks):
        lf = level_functional(w, q, float(k), order)
        recs.append(LevelRecord(i, float(k), lf["measure"], lf["Z"]))
    Z = np.array([r.Z for r in recs])
    meas = np.array([r.measure for r in recs])
    top = float(np.max(w.values))
    viol = []
    if np.any(np.diff(Z) > 1e-15 * max(1.0, Z[0])):
        viol.append("Z_n increases")
    for r in recs:
        if r.k >= top and r.Z != 0.0:
            viol.append(f"Z_{r.n} nonzero above the maximum")
    qp = q.upper
    rule = cell_rule(u.grid, order)
    wq = rule.basis @ w.values
    qq = np.broadcast_to(q(rule.points), wq.shape)
    for n in range(n_max):
        above = wq > ks[n + 1]
        mass = float(np.sum(rule.weights[above] * wq[above] ** qq[above]))
        if mass > 2.0 ** ((n + 2) * qp) * Z[n] * (1 + 1e-12):
            viol.append(f"level mass estimate fails at n={n}")
        if meas[n + 1] > 2.0 * (1.0 + k_star ** (-qp)) * 2.0 ** ((n + 1) * qp) * Z[n] * (1 + 1e-12):
            viol.append(f"level measure estimate fails at n={n}")
    K, b = _fit_recursion(Z, delta1, delta2)
    zero = np.nonzero(Z == 0.0)[0]
    vanish = int(zero[0]) if zero.size else None
    return DeGiorgiTrace(float(k_star), "-" if negative else "+", recs, K, b, vanish, sup_norm(u), viol)


# --- L-infinity bound fit ---------------------------------------------------------------


@dataclass
class LinfFit:
    fitted_C: float
    tau1: Optional[float]
    tau2: Optional[float]
    sup_norms: list
    norms: list
    violations: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _slope(x, y) -> Optional[float]:
    lx = np.log(x)
    if x.size < 2 or np.ptp(lx) < 1e-8:
        return None
    return float(np.polyfit(lx, np.log(y), 1)[0])


def verify_linf_bound(solutions: Sequence[GridFunction], q_tilde: ScalarExponent, outlier_factor: float = 10.0,
                      sup_override: Optional[Sequence[float]] = None) -> LinfFit:
    """Fit ||u||_inf <= C max{||u||^tau1, ||u||^tau2} over a family of solutions.

    tau1 is the log-log slope over members with norm < 1, tau2 over the
    rest; a subset without two distinct norms borrows the other slope (or
    1 if neither can be fitted). Violations: slopes outside (0, 10], a
    member needing more than ``outlier_factor`` times the median constant,
    or a nonzero sup with zero norm. ``sup_override`` replaces the sup
    norms (for negative controls).
    """
    if len(solutions) < 3:
        raise ValueError("need at least three solutions")
    S = np.array(sup_override if sup_override is not None else [sup_norm(u) for u in solutions], dtype=float)
    L = np.array([luxemburg_norm(u, q_tilde).luxemburg_norm for u in solutions])
    viol = []
    zero = L == 0.0
    if np.any(S[zero] > 0):
        viol.append("nonzero sup norm with zero Lebesgue norm")
    keep = ~zero
    if not np.any(keep):
        return LinfFit(0.0, None, None, S.tolist(), L.tolist(), viol)
    Sk, Lk = S[keep], L[keep]
    small, large = Lk < 1.0, Lk >= 1.0
    t1 = _slope(Lk[small], Sk[small])
    t2 = _slope(Lk[large], Sk[large])
    t1 = t1 if t1 is not None else (t2 if t2 is not None else 1.0)
    t2 = t2 if t2 is not None else t1
    for name, t in (("tau1", t1), ("tau2", t2)):
        if not (0.0 < t <= 10.0):
            viol.append(f"{name} = {t:.4g} outside (0, 10]")
    per = Sk / np.maximum(Lk**t1, Lk**t2)
    C = float(np.max(per))
    med = float(np.median(per))
    if med > 0 and np.any(per > outlier_factor * med):
        viol.append(f"member constants spread beyond {outlier_factor}x the median")
    return LinfFit(C, float(t1), float(t2), S.tolist(), L.tolist(), viol)


def kstar_bound_check(u: GridFunction, q: ScalarExponent, constants: dict) -> dict:
    """k* from :func:`kstar_select` with the modular of u, and whether sup|u| <= 2 k*."""
    M = lebesgue_modular(u, q)
    out = kstar_select(modular_q=M, **constants)
    out["modular_q"] = M
    out["sup_norm"] = sup_norm(u)
    out["bound_holds"] = bool(out["sup_norm"] <= 2.0 * out["k_star"])
    return out
