"""Variable exponents: scalar fields q(x) and symmetric pair fields p(x, y).

Evaluators are vectorised: a scalar exponent maps an array of points of shape
``(..., N)`` to an array of shape ``(...)``; a pair exponent maps two such
arrays (broadcast against each other) to the same.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .grid import BoxDomain

ScalarFn = Callable[[np.ndarray], np.ndarray]
PairFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

_BOUND_SLACK = 1e-12


class ExponentError(ValueError):
    """Raised when an exponent violates its declared structure."""


def _points(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != dim:
        if dim == 1:
            x = x[..., None]
        else:
            raise ValueError(f"expected points with trailing dimension {dim}, got {x.shape}")
    return x


def _sample_points(domain: BoxDomain, per_axis: int) -> np.ndarray:
    axes = [np.linspace(a, b, per_axis) for a, b in domain.intervals]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


@dataclass(frozen=True)
class ScalarExponent:
    """A continuous exponent q on the closed domain with 1 < q- <= q <= q+."""

    evaluator: ScalarFn
    bounds: tuple[float, float]
    dim: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.bounds
        if not (1.0 < lo <= hi < np.inf):
            raise ExponentError(f"scalar exponent bounds must satisfy 1 < lo <= hi < inf, got {self.bounds}")

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.evaluator(_points(x, self.dim)), dtype=float)

    @property
    def lower(self) -> float:
        return self.bounds[0]

    @property
    def upper(self) -> float:
        return self.bounds[1]

    def validate(self, domain: BoxDomain, per_axis: int = 64) -> "ScalarExponent":
        vals = self(_sample_points(domain, per_axis))
        if not np.all(np.isfinite(vals)):
            raise ExponentError(f"exponent {self.name!r} is not finite on the domain")
        lo, hi = self.bounds
        if vals.min() < lo - _BOUND_SLACK or vals.max() > hi + _BOUND_SLACK:
            raise ExponentError(
                f"exponent {self.name!r} leaves its declared bounds {self.bounds}: "
                f"sampled range [{vals.min():.6g}, {vals.max():.6g}]"
            )
        return self

    def conjugate(self) -> "ScalarExponent":
        """The pointwise Hoelder conjugate q/(q-1)."""
        lo, hi = self.bounds
        f = self.evaluator
        return ScalarExponent(
            lambda x: (lambda q: q / (q - 1.0))(f(x)),
            (hi / (hi - 1.0), lo / (lo - 1.0)),
            self.dim,
            name=f"conjugate({self.name})",
        )


@dataclass(frozen=True)
class PairExponent:
    """A symmetric exponent p(x, y) with fractional order s.

    The subcritical condition ``s * p+ < N`` is not enforced here because the
    Gagliardo modular is finite for Lipschitz functions for any s in (0, 1);
    operations that need it check :attr:`subcritical` themselves.
    """

    evaluator: PairFn
    bounds: tuple[float, float]
    s: float
    dim: int = 1
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        lo, hi = self.bounds
        if not (1.0 < lo <= hi < np.inf):
            raise ExponentError(f"pair exponent bounds must satisfy 1 < p- <= p+ < inf, got {self.bounds}")
        if not (0.0 < self.s < 1.0):
            raise ExponentError(f"fractional order s must lie in (0, 1), got {self.s}")
        if self.dim not in (1, 2):
            raise ExponentError(f"only N in {{1, 2}} is supported, got {self.dim}")

    def __call__(self, x, y) -> np.ndarray:
        return np.asarray(self.evaluator(_points(x, self.dim), _points(y, self.dim)), dtype=float)

    @property
    def p_minus(self) -> float:
        return self.bounds[0]

    @property
    def p_plus(self) -> float:
        return self.bounds[1]

    @property
    def subcritical(self) -> bool:
        return self.s * self.p_plus < self.dim

    def trace(self, x) -> np.ndarray:
        x = _points(x, self.dim)
        return self(x, x)

    def trace_exponent(self) -> ScalarExponent:
        """p(x) := p(x, x) as a scalar exponent."""
        return ScalarExponent(self.trace, self.bounds, self.dim, name=f"trace({self.name})")

    def validate(self, domain: BoxDomain, per_axis: int = 64) -> "PairExponent":
        if domain.dim != self.dim:
            raise ExponentError(f"domain dimension {domain.dim} != exponent dimension {self.dim}")
        pts = _sample_points(domain, per_axis)
        if self.dim == 1:
            other = pts
        else:
            other = _sample_points(domain, max(2, per_axis // 4))
        x = pts[:, None, :]
        y = other[None, :, :]
        pxy = self(x, y)
        pyx = self(y, x)
        if not np.all(np.isfinite(pxy)):
            raise ExponentError(f"exponent {self.name!r} is not finite on the domain")
        if np.any(pxy != pyx):
            worst = np.max(np.abs(pxy - pyx))
            raise ExponentError(f"exponent {self.name!r} is not symmetric (max |p(x,y)-p(y,x)| = {worst:.3g})")
        lo, hi = self.bounds
        if pxy.min() < lo - _BOUND_SLACK or pxy.max() > hi + _BOUND_SLACK:
            raise ExponentError(
                f"exponent {self.name!r} leaves its declared bounds {self.bounds}: "
                f"sampled range [{pxy.min():.6g}, {pxy.max():.6g}]"
            )
        return self


# --- built-in exponents ---------------------------------------------------


def constant_scalar(value: float, dim: int = 1) -> ScalarExponent:
    value = float(value)
    return ScalarExponent(
        lambda x: np.full(x.shape[:-1], value), (value, value), dim, name="constant", params={"value": value}
    )


def affine_scalar(c0: float, slope: Sequence[float], domain: BoxDomain) -> ScalarExponent:
    """q(x) = c0 + slope . x, bounds taken from the box corners."""
    slope = np.asarray(slope, dtype=float).reshape(domain.dim)
    corners = np.array(np.meshgrid(*domain.intervals, indexing="ij")).reshape(domain.dim, -1).T
    vals = c0 + corners @ slope
    return ScalarExponent(
        lambda x: c0 + x @ slope,
        (float(vals.min()), float(vals.max())),
        domain.dim,
        name="affine",
        params={"c0": float(c0), "slope": slope.tolist()},
    )


def piecewise_polynomial_scalar(breaks: Sequence[float], coeffs: Sequence[Sequence[float]], dim: int = 1,
                                axis: int = 0, per_axis: int = 64, domain: Optional[BoxDomain] = None) -> ScalarExponent:
    """Piecewise polynomial in coordinate ``axis``.

    ``breaks`` has ``len(coeffs) + 1`` increasing entries; piece ``k`` is the
    polynomial ``sum_j coeffs[k][j] * (t - breaks[k])**j``. Coordinates outside
    the table are clamped to its end points.
    """
    breaks = np.asarray(breaks, dtype=float)
    if len(coeffs) != len(breaks) - 1 or np.any(np.diff(breaks) <= 0):
        raise ExponentError("piecewise table needs increasing breaks and one coefficient row per piece")
    tables = [np.asarray(c, dtype=float) for c in coeffs]

    def fn(x):
        t = np.clip(x[..., axis], breaks[0], breaks[-1])
        k = np.clip(np.searchsorted(breaks, t, side="right") - 1, 0, len(tables) - 1)
        out = np.zeros_like(t)
        for i, c in enumerate(tables):
            sel = k == i
            if np.any(sel):
                out[sel] = np.polynomial.polynomial.polyval(t[sel] - breaks[i], c)
        return out

    grid_t = np.linspace(breaks[0], breaks[-1], per_axis * len(tables))
    pts = np.zeros((grid_t.size, dim))
    pts[:, axis] = grid_t
    vals = fn(pts)
    return ScalarExponent(
        fn, (float(vals.min()), float(vals.max())), dim, name="piecewise",
        params={"breaks": breaks.tolist(), "coeffs": [c.tolist() for c in tables], "axis": axis},
    )


def constant_pair(value: float, s: float, dim: int = 1) -> PairExponent:
    value = float(value)
    return PairExponent(
        lambda x, y: np.full(np.broadcast_shapes(x.shape, y.shape)[:-1], value),
        (value, value), s, dim, name="constant", params={"value": value},
    )


def affine_trace_pair(c0: float, slope: Sequence[float], s: float, domain: BoxDomain) -> PairExponent:
    """p(x, y) = c0 + slope . m with m the midpoint (x + y)/2 clamped into the box.

    The trace is the affine map c0 + slope . x on the box; clamping keeps p
    bounded when y lies outside it.
    """
    slope = np.asarray(slope, dtype=float).reshape(domain.dim)
    corners = np.array(np.meshgrid(*domain.intervals, indexing="ij")).reshape(domain.dim, -1).T
    vals = c0 + corners @ slope
    return PairExponent(
        lambda x, y: c0 + np.clip(0.5 * (x + y), domain.lower, domain.upper) @ slope,
        (float(vals.min()), float(vals.max())), s, domain.dim,
        name="affine_trace", params={"c0": float(c0), "slope": slope.tolist()},
    )


def piecewise_polynomial_pair(breaks, coeffs, s: float, dim: int = 1, axis: int = 0) -> PairExponent:
    """Piecewise polynomial table evaluated at the midpoint (x + y)/2."""
    scalar = piecewise_polynomial_scalar(breaks, coeffs, dim=dim, axis=axis)
    return PairExponent(
        lambda x, y: scalar.evaluator(0.5 * (x + y)),
        scalar.bounds, s, dim, name="piecewise", params=dict(scalar.params),
    )


def _mollifier(tau: np.ndarray) -> np.ndarray:
    out = np.zeros_like(tau)
    inside = tau < 1.0
    t2 = tau[inside] ** 2
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - t2))
    return out


def example_exponent(p0: float, R: float, s: float, domain: Optional[BoxDomain] = None,
                     dim: Optional[int] = None) -> PairExponent:
    """p(x, y) = p0 + |x - y| * xi_R(x, y) with a smooth bump xi_R supported in B_R(0, 0).

    With a domain, xi_R equals 1 on the product box and decays with the
    mollifier profile in the distance to that box, reaching 0 at |z| = R.
    Without a domain, xi_R is the plain mollifier exp(1 - 1/(1 - |z|^2/R^2)).
    """
    if p0 <= 1.0:
        raise ExponentError(f"p0 must exceed 1, got {p0}")
    if R <= 0.0:
        raise ExponentError(f"R must be positive, got {R}")
    if domain is not None:
        dim = domain.dim
        lo = np.array([a for a, _ in domain.intervals] * 2)
        hi = np.array([b for _, b in domain.intervals] * 2)
        hull_radius = float(np.sqrt(np.sum(np.maximum(lo**2, hi**2))))
        if hull_radius >= R:
            raise ExponentError(f"closure of the product domain must lie in B_R(0,0); need R > {hull_radius:.6g}")
        width = R - hull_radius

        def bump(z):
            d = np.sqrt(np.sum((z - np.clip(z, lo, hi)) ** 2, axis=-1))
            return _mollifier(d / width)
    else:
        dim = dim or 1

        def bump(z):
            return _mollifier(np.sqrt(np.sum(z**2, axis=-1)) / R)

    def fn(x, y):
        x, y = np.broadcast_arrays(x, y)
        z = np.concatenate([x, y], axis=-1)
        dist = np.sqrt(np.sum((x - y) ** 2, axis=-1))
        return p0 + dist * bump(z)

    # |x - y| <= sqrt(2) |z| < sqrt(2) R on the support of the bump
    return PairExponent(fn, (float(p0), float(p0 + np.sqrt(2.0) * R)), s, dim,
                        name="example", params={"p0": float(p0), "R": float(R)})


# --- structural checks -----------------------------------------------------


def critical_exponent(p: PairExponent, x) -> np.ndarray | float:
    """N p(x,x) / (N - s p(x,x)); rejects points where s p(x,x) >= N."""
    px = p.trace(x)
    denom = p.dim - p.s * px
    if np.any(denom <= 0.0):
        raise ExponentError("critical exponent undefined: s * p(x, x) >= N")
    out = p.dim * px / denom
    return float(out[0]) if out.shape == (1,) else out


@dataclass
class LogHolderReport:
    sup_value: float
    per_epsilon: list[dict]
    pairs_sampled: int

    def to_dict(self) -> dict:
        return {"sup_value": self.sup_value, "per_epsilon": self.per_epsilon, "pairs_sampled": self.pairs_sampled}


def _ball_template(n_points: int, dim: int, seed: int) -> np.ndarray:
    # points in the unit ball of R^dim: Halton -> gaussian direction, radius U^(1/dim)
    sob = qmc.Halton(d=dim + 1, scramble=True, seed=seed).random(n_points)
    sob = np.clip(sob, 1e-12, 1 - 1e-12)
    g = ndtri(sob[:, :dim])
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    return g * sob[:, dim:] ** (1.0 / dim)


def check_log_holder(p: PairExponent, epsilons: Sequence[float], samples: int = 4096,
                     box: Optional[BoxDomain] = None, ball_points: int = 32, seed: int = 0) -> LogHolderReport:
    """Finite-sample surrogate of the log-Hoelder-type condition near the diagonal.

    Pairs (x, y) are drawn with x quasi-uniform in ``box`` and |x - y|
    log-uniform in (1e-8, 1/2). For each epsilon the infimum of p over the
    ball B_eps(x, y) in R^{2N} is estimated from ``ball_points`` quasi-random
    points plus the centre.
    """
    if samples <= 0:
        raise ValueError("samples must be positive")
    eps_list = [float(e) for e in epsilons]
    if not eps_list or any(e <= 0 for e in eps_list):
        raise ValueError("epsilons must be a non-empty list of positive numbers")
    N = p.dim
    if box is None:
        box = BoxDomain([(-1.0, 1.0)] * N)
    lo = np.array([a for a, _ in box.intervals])
    hi = np.array([b for _, b in box.intervals])

    u = qmc.Halton(d=N + N, scramble=True, seed=seed).random(samples)
    x = lo + u[:, :N] * (hi - lo)
    log_t = np.log(1e-8) + u[:, N] * (np.log(0.5) - np.log(1e-8))
    t = np.exp(log_t) * (1 - 1e-12)
    if N == 1:
        direction = np.where((np.arange(samples) % 2)[:, None] == 0, 1.0, -1.0)
    else:
        ang = 2 * np.pi * u[:, N + 1]
        direction = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    y = x + t[:, None] * direction
    dist = np.linalg.norm(x - y, axis=-1)
    keep = (dist > 0) & (dist < 0.5)
    x, y, dist = x[keep], y[keep], dist[keep]
    pxy = p(x, y)
    weight = np.log(1.0 / dist)

    template = _ball_template(ball_points, 2 * N, seed + 1)
    z0 = np.concatenate([x, y], axis=-1)
    per_eps = []
    for eps in eps_list:
        inf_val = pxy.copy()
        for pt in template:
            z = z0 + eps * pt
            inf_val = np.minimum(inf_val, p(z[:, :N], z[:, N:]))
        vals = np.abs(pxy - inf_val) * weight
        k = int(np.argmax(vals))
        per_eps.append({"epsilon": eps, "sup": float(vals[k]), "argmax_distance": float(dist[k])})
    return LogHolderReport(min(e["sup"] for e in per_eps), per_eps, int(x.shape[0]))
