"""Clamped 2D p-Bilaplacian on [-1, 1]^2 by minimising sum w |Delta_h u|^p.

Unknowns are the grid values off the boundary ring; the ring carries g.
The 5-point Laplacian is evaluated at every node, with the normal derivative
imposed through a ghost node, ``u_{-1} = u_1 - 2 h g_x`` on the left edge and
likewise on the others. The energy uses trapezoid weights. Central differences
are exact on quadratics, so quadratic data is reproduced exactly.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

from ._pnewton import averaged_energy, minimize_power_sum
from .core import ConvergenceError, RejectedDataError, ScalarField, SolveReport

log = logging.getLogger(__name__)

MAX_PRACTICAL_P = 142


@dataclass(frozen=True)
class Grid2D:
    n: int

    def __post_init__(self):
        if self.n < 17:
            raise RejectedDataError("grid needs n >= 17")

    @property
    def h(self) -> float:
        return 2.0 / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-1.0, 1.0, self.n)

    def mesh(self):
        return np.meshgrid(self.axis, self.axis, indexing="ij")

    def field(self, values) -> ScalarField:
        return ScalarField((self.n, self.n), (self.h, self.h), (-1.0, -1.0), values)

    def weights(self) -> np.ndarray:
        t = np.ones(self.n)
        t[[0, -1]] = 0.5
        return self.h**2 * np.outer(t, t)

    def boundary_mask(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=bool)
        m[[0, -1], :] = True
        m[:, [0, -1]] = True
        return m


@dataclass(frozen=True)
class BoundaryData:
    """Clamped data: ``g`` and its gradient, vectorised over coordinate arrays.

    ``g`` must be evaluable on the boundary ring; where it is defined inside
    too, it also serves as the default initial guess.
    """

    g: Callable
    grad: Callable
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @classmethod
    def test2(cls) -> "BoundaryData":
        def g(x, y):
            return np.cos(np.pi * x) * np.cos(np.pi * y) / 20

        def grad(x, y):
            return (
                -np.pi * np.sin(np.pi * x) * np.cos(np.pi * y) / 20,
                -np.pi * np.cos(np.pi * x) * np.sin(np.pi * y) / 20,
            )

        return cls(g, grad, "test2")

    @classmethod
    def quadratic(cls, axx=0.0, axy=0.0, ayy=0.0, ax=0.0, ay=0.0, a0=0.0) -> "BoundaryData":
        """g = axx x^2 + axy x y + ayy y^2 + ax x + ay y + a0."""

        def g(x, y):
            return axx * x * x + axy * x * y + ayy * y * y + ax * x + ay * y + a0

        def grad(x, y):
            return 2 * axx * x + axy * y + ax, axy * x + 2 * ayy * y + ay

        params = dict(axx=axx, axy=axy, ayy=ayy, ax=ax, ay=ay, a0=a0)
        return cls(g, grad, "quadratic", params)


def _second_difference(n: int, h: float) -> sp.csr_matrix:
    """1D second difference at all nodes, ghost nodes eliminated (constant part excluded)."""
    main = -2.0 * np.ones(n)
    up = np.ones(n - 1)
    lo = np.ones(n - 1)
    up[0] = 2.0
    lo[-1] = 2.0
    return sp.diags([lo, main, up], [-1, 0, 1], format="csr") / h**2


def _system(bd: BoundaryData, grid: Grid2D):
    """Affine map from free values to Delta_h at every node, plus weights."""
    n, h = grid.n, grid.h
    D = _second_difference(n, h)
    eye = sp.identity(n, format="csr")
    L = (sp.kron(D, eye) + sp.kron(eye, D)).tocsr()
    X, Y = grid.mesh()
    ring = grid.boundary_mask().reshape(-1)
    fixed = np.flatnonzero(ring)
    free = np.flatnonzero(~ring)
    gvals = np.asarray(bd.g(X, Y), dtype=float) * np.ones_like(X)
    # ghost contributions: u_{-1} = u_1 - 2h g_x, u_n = u_{n-2} + 2h g_x
    ghost = np.zeros((n, n))
    ax = grid.axis
    gx_lo, _ = bd.grad(np.full(n, -1.0), ax)
    gx_hi, _ = bd.grad(np.full(n, 1.0), ax)
    _, gy_lo = bd.grad(ax, np.full(n, -1.0))
    _, gy_hi = bd.grad(ax, np.full(n, 1.0))
    ghost[0, :] += -2.0 * np.broadcast_to(gx_lo, n) / h
    ghost[-1, :] += 2.0 * np.broadcast_to(gx_hi, n) / h
    ghost[:, 0] += -2.0 * np.broadcast_to(gy_lo, n) / h
    ghost[:, -1] += 2.0 * np.broadcast_to(gy_hi, n) / h
    g_flat = gvals.reshape(-1)
    c = L[:, fixed] @ g_flat[fixed] + ghost.reshape(-1)
    M = L[:, free]
    return M, c, grid.weights().reshape(-1), free, fixed, g_flat


def discrete_energy(u: ScalarField, bd: BoundaryData, grid: Grid2D, p: int) -> float:
    """Averaged discrete energy (sum w |Delta_h u|^p / sum w)^(2/p) of a full grid field."""
    M, c, w, free, _, _ = _system(bd, grid)
    return averaged_energy(M @ u.values[free] + c, w, p)


def solve_p_2d(
    bd: BoundaryData,
    p: int,
    grid: Grid2D,
    init: ScalarField | None = None,
    tol: float = 1e-10,
    max_iter: int = 400,
) -> tuple[ScalarField, SolveReport]:
    """Discrete p-Bilaplacian with clamped data ``bd`` on ``grid``.

    Without ``init`` the start is ``g`` itself at the interior nodes.
    """
    if p < 2 or p % 2:
        raise RejectedDataError(f"p must be an even integer >= 2, got {p}")
    if p > MAX_PRACTICAL_P:
        log.warning("p=%d is beyond the practical range %d; expect oscillation", p, MAX_PRACTICAL_P)
    M, c, w, free, fixed, g_flat = _system(bd, grid)
    if init is None:
        x0 = g_flat[free]
    else:
        if init.shape != (grid.n, grid.n):
            raise RejectedDataError("init does not match the grid")
        x0 = np.array(init.values[free])
    x, report = minimize_power_sum(M, c, w, p, x0, tol=tol, max_iter=max_iter)
    vals = g_flat.copy()
    vals[free] = x
    return grid.field(vals), report


def laplacian_field(u: ScalarField) -> ScalarField:
    """5-point Laplacian at interior nodes; the boundary ring is cropped."""
    if u.dim != 2:
        raise ValueError("laplacian_field needs a 2D field")
    v = u.grid
    hx, hy = u.spacing
    lap = (v[2:, 1:-1] - 2 * v[1:-1, 1:-1] + v[:-2, 1:-1]) / hx**2
    lap = lap + (v[1:-1, 2:] - 2 * v[1:-1, 1:-1] + v[1:-1, :-2]) / hy**2
    origin = (u.origin[0] + hx, u.origin[1] + hy)
    return ScalarField(lap.shape, (hx, hy), origin, lap)


@dataclass
class InterfaceMetrics:
    level: float
    cov: float
    regions: int
    positive_regions: int
    negative_regions: int
    positive_median: float
    negative_median: float
    histogram: list[int]
    bin_edges: list[float]
    band_fraction: float

    def __post_init__(self):
        if not (self.cov >= 0 or math.isnan(self.cov)):
            raise ValueError("coefficient of variation must be >= 0")
        if self.regions < 1:
            raise ValueError("region count must be >= 1")

    @property
    def balance(self) -> float:
        """|median over positive phase + median over negative phase|."""
        return abs(self.positive_median + self.negative_median)

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "cov": self.cov,
            "regions": self.regions,
            "positive_regions": self.positive_regions,
            "negative_regions": self.negative_regions,
            "positive_median": self.positive_median,
            "negative_median": self.negative_median,
            "balance": self.balance,
            "band_fraction": self.band_fraction,
            "histogram": self.histogram,
            "bin_edges": self.bin_edges,
        }


def _nan_median(v: np.ndarray) -> float:
    return float(np.median(v)) if v.size else float("nan")


def interface_metrics(lap: ScalarField, mask: np.ndarray | None = None, band: int = 2, bins: int = 64) -> InterfaceMetrics:
    """Piecewise-constancy statistics of a Laplacian field.

    ``mask`` marks samples to ignore. The coefficient of variation of
    ``|lap|`` excludes a ``band``-cell neighbourhood of sign changes.
    Regions are 4-connected components of each strict sign.
    """
    if lap.dim != 2:
        raise ValueError("interface_metrics needs a 2D field")
    v = lap.grid
    valid = np.ones(v.shape, dtype=bool) if mask is None else ~np.asarray(mask, dtype=bool)
    if not valid.any():
        raise RejectedDataError("all samples are masked")
    pos = (v > 0) & valid
    neg = (v < 0) & valid
    # sign changes between 4-neighbours
    edge = np.zeros(v.shape, dtype=bool)
    for ax in (0, 1):
        sl_a = [slice(None)] * 2
        sl_b = [slice(None)] * 2
        sl_a[ax], sl_b[ax] = slice(None, -1), slice(1, None)
        flip = (pos[tuple(sl_a)] & neg[tuple(sl_b)]) | (neg[tuple(sl_a)] & pos[tuple(sl_b)])
        edge[tuple(sl_a)] |= flip
        edge[tuple(sl_b)] |= flip
    near = ndimage.binary_dilation(edge, iterations=band) if edge.any() and band > 0 else edge
    keep = valid & ~near
    if not keep.any():
        keep = valid
    a = np.abs(v[keep])
    med = float(np.median(a))
    cov = float(np.std(a) / med) if med > 0 else 0.0
    four = ndimage.generate_binary_structure(2, 1)
    n_pos = int(ndimage.label(pos, structure=four)[1])
    n_neg = int(ndimage.label(neg, structure=four)[1])
    hist, edges = np.histogram(v[valid], bins=bins)
    return InterfaceMetrics(
        level=float(np.median(np.abs(v[valid]))),
        cov=cov,
        regions=max(n_pos + n_neg, 1),
        positive_regions=n_pos,
        negative_regions=n_neg,
        positive_median=_nan_median(v[pos]),
        negative_median=_nan_median(v[neg]),
        histogram=hist.tolist(),
        bin_edges=edges.tolist(),
        band_fraction=float(np.mean(near & valid)),
    )


@dataclass
class Continuation2D:
    ps: list[int]
    fields: list[ScalarField] = field(default_factory=list)
    reports: list[SolveReport] = field(default_factory=list)
    metrics: list[InterfaceMetrics] = field(default_factory=list)
    error: str | None = None


def even_path(ps, ratio: float = 1.25) -> list[int]:
    """Even exponents from 2 through ``ps`` with consecutive ratios <= ``ratio``.

    Requested values are always included.
    """
    path = [2]
    for target in sorted(int(p) for p in ps):
        while path[-1] < target:
            nxt = max(path[-1] + 2, 2 * int(path[-1] * ratio // 2))
            path.append(min(nxt, target))
    return path


def p_continuation_2d(
    bd: BoundaryData, ps, grid: Grid2D, tol: float = 1e-10, max_iter: int = 400, ratio: float = 1.25
) -> Continuation2D:
    """Warm-started sweep over ``ps``.

    Intermediate even stages (see ``even_path``) are solved but not kept; a
    direct jump such as 12 -> 42 stalls Newton on the 2D problem.
    """
    ps = [int(p) for p in ps]
    if any(p < 2 or p % 2 for p in ps) or any(q <= p for p, q in zip(ps, ps[1:])):
        raise RejectedDataError("schedule must be increasing even integers >= 2")
    stages = even_path(ps, ratio)
    out = Continuation2D(ps)
    state = None
    for p in stages:
        try:
            u, rep = solve_p_2d(bd, p, grid, init=state, tol=tol, max_iter=max_iter)
        except ConvergenceError as exc:
            out.error = f"p={p}: {exc}"
            log.warning("2D continuation stopped: %s", out.error)
            break
        state = u
        log.info("2D p=%d iterations=%d residual=%.3g", p, rep.iterations, rep.residual)
        if p in ps:
            out.fields.append(u)
            out.reports.append(rep)
            out.metrics.append(interface_metrics(laplacian_field(u)))
    return out
