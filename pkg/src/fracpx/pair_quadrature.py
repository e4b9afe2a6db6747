"""Quadrature for double integrals with the kernel |x - y|^{-N - s p(x, y)}.

Every integral is reduced to a finite sum ``sum_k c_k |Delta_k u|^{P_k}``
where ``Delta_k u`` is a linear functional of the nodal values (a difference
u(x_k) - u(y_k), or u(x_k) alone when y_k lies outside the box). Three blocks
make up the sum:

far       cell pairs more than ``band`` cells apart: tensor Gauss points per
          cell, stored as dense symmetric matrices.
near      cell pairs within ``band`` cells: integrated in (x, z = y - x).
          The z-range is split at z = 0 per axis; boxes with a corner at
          z = 0 get a Duffy map with Gauss-Jacobi weight rho^alpha in the
          radial variable, alpha = P(1 - s) - 1, the others tensor Gauss.
exterior  x in the box, y outside: rays from each outer point, a collar of
          width W integrated with r = rho e^tau, and the analytic tail
          beyond it with the exponent frozen at p(x, x). Counted twice for
          the two orderings of (x, y).
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from itertools import product
from threading import Lock

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi

from .exponents import PairExponent
from .grid import Grid

REGIONS = ("omega", "full")

DEFAULTS = {
    1: {"band": 1, "n_jacobi": 8, "n_xi": 1, "n_x": 4, "n_z": 4, "far_order": 4, "n_tau": 16, "n_face": 1, "face_panels": 1},
    2: {"band": 1, "n_jacobi": 4, "n_xi": 3, "n_x": 2, "n_z": 3, "far_order": 2, "n_tau": 8, "n_face": 8, "face_panels": 4},
}


def _gauss01(n: int):
    g, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (g + 1.0), 0.5 * w


def _composite01(n: int, panels: int):
    """Gauss rule with ``n`` nodes on each of ``panels`` equal panels of [0, 1]."""
    g, w = _gauss01(n)
    k = np.arange(panels)[:, None]
    return ((k + g) / panels).ravel(), np.tile(w / panels, panels)


def _tensor(nodes: np.ndarray, weights: np.ndarray, dim: int):
    mesh = np.meshgrid(*([nodes] * dim), indexing="ij")
    wmesh = np.meshgrid(*([weights] * dim), indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    w = np.prod(np.stack([m.ravel() for m in wmesh], axis=-1), axis=-1)
    return pts, w


def _jacobi01(n: int, alpha: float):
    """Nodes/weights for int_0^1 f(r) r^alpha dr."""
    x, w = roots_jacobi(n, 0.0, alpha)
    return 0.5 * (x + 1.0), w / 2.0 ** (alpha + 1.0)


def _phi(d: np.ndarray, P) -> np.ndarray:
    return np.sign(d) * np.abs(d) ** (P - 1.0)


def _compact(P: np.ndarray):
    """Collapse a constant exponent array to a float (faster powers)."""
    P = np.asarray(P, dtype=float)
    if P.size and np.all(P == P.flat[0]):
        return float(P.flat[0])
    return P


@dataclass
class _Block:
    """Sum of c * |D u|^P with D sparse (near) or an index into outer points (exterior)."""

    c: np.ndarray
    P: object
    D: sp.csr_matrix | None = None
    index: np.ndarray | None = None


@dataclass
class PairQuadrature:
    grid: Grid
    p: PairExponent
    region: str
    options: dict
    far_points: np.ndarray
    far_basis: sp.csr_matrix
    far_C: np.ndarray
    far_P: object
    near: _Block
    exterior: _Block | None
    stats: dict = field(default_factory=dict)

    # --- assembly -----------------------------------------------------------

    @classmethod
    def build(cls, grid: Grid, p: PairExponent, region: str = "full", swap: bool = False, **opts) -> "PairQuadrature":
        if region not in REGIONS:
            raise ValueError(f"region must be one of {REGIONS}, got {region!r}")
        if p.dim != grid.dim:
            raise ValueError("exponent and grid dimensions differ")
        o = dict(DEFAULTS[grid.dim])
        unknown = set(opts) - set(o) - {"collar_width"}
        if unknown:
            raise ValueError(f"unknown quadrature options {sorted(unknown)}")
        o.update(opts)
        o.setdefault("collar_width", grid.domain.diameter)
        N, s = grid.dim, p.s
        pe = (lambda a, b: p(b, a)) if swap else p

        # far field
        fpts, fw, fcell = grid.cell_quadrature(o["far_order"])
        fB = grid.interpolation_matrix(fpts)
        cidx = np.stack(np.unravel_index(fcell, grid.cell_shape), axis=-1)
        sep = np.max(np.abs(cidx[:, None, :] - cidx[None, :, :]), axis=-1)
        far = sep > o["band"]
        X, Y = fpts[:, None, :], fpts[None, :, :]
        P = pe(X, Y)
        r = np.sqrt(np.sum((X - Y) ** 2, axis=-1))
        with np.errstate(divide="ignore"):
            C = np.where(far, (fw[:, None] * fw[None, :]) * r ** (-N - s * P), 0.0)
        far_P = _compact(np.where(far, P, P[far][0] if np.any(far) else 2.0))

        near = _near_block(grid, pe, s, o)
        ext = _exterior_block(grid, pe, s, o, fpts, fw) if region == "full" else None

        stats = {
            "far_points": int(fpts.shape[0]),
            "far_pairs": int(np.count_nonzero(C)),
            "near_nodes": int(near.c.size),
            "exterior_nodes": 0 if ext is None else int(ext.c.size),
            "band": int(o["band"]),
        }
        return cls(grid, p, region, o, fpts, fB, C, far_P, near, ext, stats)

    # --- evaluation -----------------------------------------------------------

    def _differences(self, u: np.ndarray):
        uq = self.far_basis @ u
        dn = self.near.D @ u
        de = None if self.exterior is None else uq[self.exterior.index]
        return uq, dn, de

    def parts(self, u, lam: float = 1.0, divide_by_p: bool = False) -> dict:
        """Per-block values of sum c |Delta(u/lam)|^P (optionally divided by P)."""
        u = np.asarray(u, dtype=float)
        uq, dn, de = self._differences(u)
        return self._parts_from(uq, dn, de, lam, divide_by_p)

    def _parts_from(self, uq, dn, de, lam, divide_by_p):
        def term(c, d, P):
            v = c * np.abs(d / lam) ** P
            return float(np.sum(v / P if divide_by_p else v))

        diff = uq[:, None] - uq[None, :]
        out = {"far": term(self.far_C, diff, self.far_P), "near": term(self.near.c, dn, self.near.P)}
        if self.exterior is not None:
            out["exterior"] = 2.0 * term(self.exterior.c, de, self.exterior.P)
        return out

    def modular(self, u) -> float:
        return float(sum(self.parts(u).values()))

    def energy(self, u) -> float:
        """sum c |Delta u|^P / P over the region."""
        return float(sum(self.parts(u, divide_by_p=True).values()))

    def modular_of_scale(self, u):
        """Closure lam -> modular(u / lam) with the differences precomputed."""
        uq, dn, de = self._differences(np.asarray(u, dtype=float))
        return lambda lam: float(sum(self._parts_from(uq, dn, de, lam, False).values()))

    def gradient(self, u) -> np.ndarray:
        """Nodal gradient of :meth:`energy`."""
        u = np.asarray(u, dtype=float)
        uq, dn, de = self._differences(u)
        G = self.far_C * _phi(uq[:, None] - uq[None, :], self.far_P)
        gq = G.sum(axis=1) - G.sum(axis=0)
        if self.exterior is not None:
            gq = gq + 2.0 * np.bincount(self.exterior.index, weights=self.exterior.c * _phi(de, self.exterior.P),
                                        minlength=uq.size)
        return self.far_basis.T @ gq + self.near.D.T @ (self.near.c * _phi(dn, self.near.P))

    def weak(self, u, v) -> float:
        return float(self.gradient(u) @ np.asarray(v, dtype=float))


def _near_block(grid: Grid, pe, s: float, o: dict) -> _Block:
    N = grid.dim
    h = grid.spacing
    lo, hi = grid.domain.lower, grid.domain.upper
    band = int(o["band"])
    cshape = np.array(grid.cell_shape)
    cells = np.stack(np.unravel_index(np.arange(int(np.prod(cshape))), grid.cell_shape), axis=-1)
    corners = lo + cells * h

    # Jacobi exponent per cell from the trace at the cell centre
    centres = corners + 0.5 * h
    p_ref = pe(centres, centres)
    if np.unique(p_ref).size > 64:
        p_ref = np.round(p_ref, 2)
    groups = {}
    for val in np.unique(p_ref):
        groups[float(val)] = np.nonzero(p_ref == val)[0]

    xr, xw = _tensor(*_gauss01(o["n_x"]), N)
    zg, zgw = _gauss01(o["n_z"])
    xi, xiw = _gauss01(o["n_xi"])

    xs, ys, cs = [], [], []

    def emit(cell_ids, z, wz):
        # z: (m, N) relative offsets, wz: (m,) or (ncell, m) weights in z
        if cell_ids.size == 0:
            return
        w = z - off_vec * h
        L = h - np.abs(w)
        start = np.maximum(0.0, -w)
        A = corners[cell_ids][:, None, None, :]
        x = A + start[None, :, None, :] + L[None, :, None, :] * xr[None, None, :, :]
        zz = np.broadcast_to(z[None, :, None, :], x.shape)
        y = x + zz
        wz = np.broadcast_to(np.atleast_2d(wz), (cell_ids.size, z.shape[0]))
        c = wz[:, :, None] * np.prod(L, axis=-1)[None, :, None] * xw[None, None, :]
        xs.append(x.reshape(-1, N))
        ys.append(y.reshape(-1, N))
        cs.append(np.broadcast_to(c, x.shape[:-1]).reshape(-1))

    for off in product(range(-band, band + 1), repeat=N):
        off_vec = np.array(off, dtype=float)
        tgt = cells + np.array(off)
        valid = np.all((tgt >= 0) & (tgt < cshape), axis=-1)
        for sides in product((-1, 1), repeat=N):
            sides = np.array(sides, dtype=float)
            touches = np.all((off_vec == 0) | (off_vec == -sides))
            if touches:
                e = np.where(off_vec == 0, sides * h, off_vec * h)
                for val, ids in groups.items():
                    ids = ids[valid[ids]]
                    alpha = val * (1.0 - s) - 1.0
                    rho, rw = _jacobi01(o["n_jacobi"], alpha)
                    if N == 1:
                        t = rho[:, None]
                        wt = rw * rho ** (-alpha)
                    else:
                        R, X = np.meshgrid(rho, xi, indexing="ij")
                        WR, WX = np.meshgrid(rw, xiw, indexing="ij")
                        R, X, WR, WX = R.ravel(), X.ravel(), WR.ravel(), WX.ravel()
                        t = np.concatenate([np.stack([R, R * X], -1), np.stack([R * X, R], -1)])
                        wt = np.tile(WR * WX * R ** (1.0 - alpha), 2)
                    emit(ids, t * e, wt * np.prod(np.abs(e)))
            else:
                a0 = off_vec * h
                a1 = a0 + sides * h
                zn, zw = _tensor(zg, zgw, N)
                z = a0 + zn * (a1 - a0)
                emit(np.nonzero(valid)[0], z, zw * np.prod(h))

    x = np.clip(np.concatenate(xs), lo, hi)
    y = np.clip(np.concatenate(ys), lo, hi)
    c = np.concatenate(cs)
    z = np.concatenate(ys) - np.concatenate(xs)
    P = pe(x, y)
    c = c * np.sqrt(np.sum(z**2, axis=-1)) ** (-N - s * P)
    D = grid.interpolation_matrix(x) - grid.interpolation_matrix(y)
    return _Block(c=c, P=_compact(P), D=D.tocsr())


def _exterior_block(grid: Grid, pe, s: float, o: dict, xq: np.ndarray, wq: np.ndarray) -> _Block:
    N = grid.dim
    lo, hi = grid.domain.lower, grid.domain.upper
    W = float(o["collar_width"])
    tg, tw = _gauss01(o["n_tau"])
    vg, vw = _composite01(o["n_face"], o["face_panels"])
    nq = xq.shape[0]
    qi = np.arange(nq)
    idx_c, y_c, c_c, idx_t, c_t, rc_t = [], [], [], [], [], []

    for a in range(N):
        for side in (-1.0, 1.0):
            normal = np.zeros(N)
            normal[a] = side
            d = (hi[a] - xq[:, a]) if side > 0 else (xq[:, a] - lo[a])
            if N == 1:
                theta = np.broadcast_to(normal, (nq, 1, N))
                rho = d[:, None]
                ang_w = np.ones((nq, 1))
            else:
                # angle over this face via l = d sinh(v): d(theta) = dv / cosh(v), exit distance d cosh(v)
                b = 1 - a
                tangent = np.zeros(N)
                tangent[b] = 1.0
                v0 = np.arcsinh((lo[b] - xq[:, b]) / d)
                v1 = np.arcsinh((hi[b] - xq[:, b]) / d)
                v = v0[:, None] + (v1 - v0)[:, None] * vg[None, :]
                ang_w = (v1 - v0)[:, None] * vw[None, :] / np.cosh(v)
                rho = d[:, None] * np.cosh(v)
                ell = d[:, None] * np.sinh(v)
                theta = (d[:, None, None] * normal + ell[:, :, None] * tangent) / rho[:, :, None]
            # collar [rho, rho + W] with r = rho e^tau: r^{N-1} r^{-N-sP} dr = r^{-sP} dtau
            T = np.log((rho + W) / rho)
            r = rho[:, :, None] * np.exp(T[:, :, None] * tg)
            y = xq[:, None, None, :] + r[..., None] * theta[:, :, None, :]
            idx_c.append(np.broadcast_to(qi[:, None, None], r.shape).reshape(-1))
            y_c.append(y.reshape(-1, N))
            c_c.append((wq[:, None, None] * ang_w[:, :, None] * T[:, :, None] * tw).reshape(-1))
            idx_t.append(np.broadcast_to(qi[:, None], rho.shape).reshape(-1))
            c_t.append((wq[:, None] * ang_w).reshape(-1))
            rc_t.append((rho + W).reshape(-1))

    idx = np.concatenate(idx_c)
    y = np.concatenate(y_c)
    x = xq[idx]
    P = pe(x, y)
    r = np.sqrt(np.sum((y - x) ** 2, axis=-1))
    c = np.concatenate(c_c) * r ** (-s * P)
    # analytic tail beyond the collar with the exponent frozen at p(x, x)
    tidx = np.concatenate(idx_t)
    P0 = pe(xq, xq)[tidx]
    rc = np.concatenate(rc_t)
    ct = np.concatenate(c_t) * rc ** (-s * P0) / (s * P0)
    return _Block(c=np.concatenate([c, ct]), P=_compact(np.concatenate([P, P0])),
                  index=np.concatenate([idx, tidx]))


_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()
_CACHE_LOCK = Lock()
_CACHE_SIZE = 8


def get_quadrature(grid: Grid, p: PairExponent, region: str = "full", **opts) -> PairQuadrature:
    """Build or reuse a :class:`PairQuadrature` (small LRU keyed by exponent identity)."""
    key = (grid, id(p), region, tuple(sorted(opts.items())))
    with _CACHE_LOCK:
        hit = _CACHE.get(key)
        if hit is not None and hit[0] is p:
            _CACHE.move_to_end(key)
            return hit[1]
    Q = PairQuadrature.build(grid, p, region, **opts)
    with _CACHE_LOCK:
        _CACHE[key] = (p, Q)
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return Q
