"""Box domains, tensor grids and piecewise-multilinear nodal functions.

Functions are extended by zero outside the box, which is how the Dirichlet
condition ``u = 0`` off the domain is represented.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class BoxDomain:
    intervals: tuple[tuple[float, float], ...]

    def __init__(self, intervals: Sequence[Sequence[float]]):
        ivs = tuple((float(a), float(b)) for a, b in intervals)
        if len(ivs) not in (1, 2):
            raise ValueError(f"only N in {{1, 2}} is supported, got N={len(ivs)}")
        for a, b in ivs:
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ValueError(f"invalid interval [{a}, {b}]")
        object.__setattr__(self, "intervals", ivs)

    @property
    def dim(self) -> int:
        return len(self.intervals)

    @property
    def measure(self) -> float:
        return float(np.prod([b - a for a, b in self.intervals]))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((b - a) ** 2 for a, b in self.intervals)))

    @property
    def lower(self) -> np.ndarray:
        return np.array([a for a, _ in self.intervals])

    @property
    def upper(self) -> np.ndarray:
        return np.array([b for _, b in self.intervals])

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lower) & (x <= self.upper), axis=-1)

    def to_dict(self) -> dict:
        return {"intervals": [list(iv) for iv in self.intervals]}


@dataclass(frozen=True)
class Grid:
    domain: BoxDomain
    shape: tuple[int, ...]

    def __init__(self, domain: BoxDomain, nodes: int | Sequence[int]):
        if np.isscalar(nodes):
            nodes = (int(nodes),) * domain.dim
        shape = tuple(int(n) for n in nodes)
        if len(shape) != domain.dim or any(n < 2 for n in shape):
            raise ValueError(f"need at least 2 nodes per axis, got {shape}")
        object.__setattr__(self, "domain", domain)
        object.__setattr__(self, "shape", shape)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(b - a) / (n - 1) for (a, b), n in zip(self.domain.intervals, self.shape)])

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(n - 1 for n in self.shape)

    @cached_property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(a, b, n) for (a, b), n in zip(self.domain.intervals, self.shape)]

    @cached_property
    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(size, N)`` in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask.ravel()

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary_mask

    def interpolation_matrix(self, points: np.ndarray) -> sp.csr_matrix:
        """Sparse matrix B with (B @ u)[k] = multilinear interpolant of u at points[k].

        Rows for points outside the closed box are empty (zero extension).
        """
        pts = np.asarray(points, dtype=float).reshape(-1, self.dim)
        m = pts.shape[0]
        inside = self.domain.contains(pts)
        h = self.spacing
        lo = self.domain.lower
        rows, cols, vals = [], [], []
        base_idx = []
        frac = []
        for ax in range(self.dim):
            t = (pts[:, ax] - lo[ax]) / h[ax]
            i = np.clip(np.floor(t).astype(int), 0, self.shape[ax] - 2)
            base_idx.append(i)
            frac.append(t - i)
        strides = np.array([int(np.prod(self.shape[ax + 1:])) for ax in range(self.dim)])
        for corner in np.ndindex(*([2] * self.dim)):
            w = np.ones(m)
            flat = np.zeros(m, dtype=np.int64)
            for ax, c in enumerate(corner):
                w = w * (frac[ax] if c else 1.0 - frac[ax])
                flat = flat + (base_idx[ax] + c) * strides[ax]
            sel = inside & (w != 0.0)
            rows.append(np.nonzero(sel)[0])
            cols.append(flat[sel])
            vals.append(w[sel])
        return sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(m, self.size)
        )

    def cell_quadrature(self, order: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Tensor Gauss-Legendre points per cell: (points, weights, cell index).

        Weights are positive and sum to the domain measure.
        """
        g, gw = np.polynomial.legendre.leggauss(order)
        g = 0.5 * (g + 1.0)
        gw = 0.5 * gw
        per_axis_pts, per_axis_w = [], []
        for ax in range(self.dim):
            left = self.axes[ax][:-1]
            hx = self.spacing[ax]
            per_axis_pts.append((left[:, None] + hx * g[None, :]).ravel())
            per_axis_w.append(np.tile(hx * gw, left.size))
        mesh = np.meshgrid(*per_axis_pts, indexing="ij")
        wmesh = np.meshgrid(*per_axis_w, indexing="ij")
        pts = np.stack([mm.ravel() for mm in mesh], axis=-1)
        w = np.prod(np.stack([ww.ravel() for ww in wmesh], axis=-1), axis=-1)
        cell_axes = [np.repeat(np.arange(c), order) for c in self.cell_shape]
        cmesh = np.meshgrid(*cell_axes, indexing="ij")
        cell = np.ravel_multi_index(tuple(c.ravel() for c in cmesh), self.cell_shape)
        return pts, w, cell

    def reflection_permutation(self, axis: int = 0) -> np.ndarray:
        """Node permutation of the mirror image about the box centre along ``axis``."""
        idx = np.arange(self.size).reshape(self.shape)
        return np.flip(idx, axis=axis).ravel()

    def to_dict(self) -> dict:
        return {"domain": self.domain.to_dict(), "nodes": list(self.shape)}


class GridFunction:
    """Nodal values of a continuous piecewise-multilinear function.

    When ``pinned`` is set every boundary node holds exactly 0.
    """

    __slots__ = ("grid", "_values", "pinned")

    def __init__(self, grid: Grid, values, pinned: bool = False):
        vals = np.array(values, dtype=float).reshape(grid.size)
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid function values must be finite")
        if pinned:
            vals[grid.boundary_mask] = 0.0
        vals.setflags(write=False)
        self.grid = grid
        self._values = vals
        self.pinned = bool(pinned)

    @property
    def values(self) -> np.ndarray:
        return self._values

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.pinned)

    def __neg__(self):
        return self.with_values(-self._values)

    def __mul__(self, c: float):
        return self.with_values(float(c) * self._values)

    __rmul__ = __mul__

    def __add__(self, other: "GridFunction"):
        _check_same_grid(self, other)
        return GridFunction(self.grid, self._values + other._values, self.pinned and other.pinned)

    def __sub__(self, other: "GridFunction"):
        _check_same_grid(self, other)
        return GridFunction(self.grid, self._values - other._values, self.pinned and other.pinned)

    def __repr__(self):
        return f"GridFunction(shape={self.grid.shape}, pinned={self.pinned}, sup={sup_norm(self):.4g})"


def _check_same_grid(u: GridFunction, v: GridFunction):
    if u.grid != v.grid:
        raise ValueError("grid functions live on different grids")


def interpolate(g: Callable[[np.ndarray], np.ndarray], grid: Grid, pin_boundary: bool = False) -> GridFunction:
    """Sample ``g`` (vectorised over points of shape (M, N)) at the grid nodes."""
    vals = np.asarray(g(grid.nodes), dtype=float)
    vals = np.broadcast_to(vals, (grid.size,)).copy() if vals.ndim == 0 else vals.reshape(grid.size)
    if not np.all(np.isfinite(vals)):
        raise ValueError("interpolated function has non-finite nodal values")
    return GridFunction(grid, vals, pinned=pin_boundary)


def evaluate(u: GridFunction, x) -> np.ndarray | float:
    """Multilinear interpolation inside the box, exactly 0 outside it."""
    x = np.asarray(x, dtype=float)
    dim = u.grid.dim
    if dim == 1:
        lead = x.shape[:-1] if x.ndim >= 2 and x.shape[-1] == 1 else x.shape
    else:
        lead = x.shape[:-1]
    out = u.grid.interpolation_matrix(x.reshape(-1, dim)) @ u.values
    return float(out[0]) if lead == () else out.reshape(lead)


def sup_norm(u: GridFunction) -> float:
    return float(np.max(np.abs(u.values))) if u.values.size else 0.0


def positive_part_minus_level(u: GridFunction, k: float) -> GridFunction:
    """(u - k)_+ nodewise; the result of a pinned function stays pinned for k >= 0."""
    if k < 0:
        raise ValueError("level k must be nonnegative")
    return GridFunction(u.grid, np.maximum(u.values - k, 0.0), u.pinned)


# --- serialization ---------------------------------------------------------


def to_csv(u: GridFunction) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{i}" for i in range(u.grid.dim)] + ["value"])
    for node, val in zip(u.grid.nodes, u.values):
        w.writerow([repr(float(c)) for c in node] + [repr(float(val))])
    return buf.getvalue()


def from_csv(text: str, grid: Grid, pinned: bool = False) -> GridFunction:
    """Read a CSV written by :func:`to_csv`; the node coordinates must match ``grid``."""
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], [r for r in rows[1:] if r]
    if len(header) != grid.dim + 1 or len(body) != grid.size:
        raise ValueError(f"CSV has {len(body)} rows x {len(header)} columns; grid expects {grid.size} x {grid.dim + 1}")
    data = np.array([[float(c) for c in r] for r in body])
    if not np.allclose(data[:, :-1], grid.nodes, rtol=0, atol=1e-12 * max(1.0, grid.domain.diameter)):
        raise ValueError("CSV node coordinates do not match the grid")
    return GridFunction(grid, data[:, -1], pinned=pinned)


def to_json(u: GridFunction) -> str:
    return json.dumps({"grid": u.grid.to_dict(), "pinned": u.pinned, "values": [float(v) for v in u.values]},
                      sort_keys=True)


def from_json(text: str) -> GridFunction:
    d = json.loads(text)
    grid = Grid(BoxDomain(d["grid"]["domain"]["intervals"]), d["grid"]["nodes"])
    return GridFunction(grid, d["values"], pinned=d.get("pinned", False))
