"""Clamped 1D p-Bilaplacian by minimising sum_e int |u_h''|^p over C^1
piecewise cubics, with warm-started continuation in p."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ._pnewton import minimize_power_sum
from .core import ConvergenceError, HermiteData1D, RejectedDataError, ScalarField, SolveReport

log = logging.getLogger(__name__)

MAX_GAUSS_POINTS = 10


@dataclass(frozen=True)
class Mesh1D:
    a: float
    b: float
    m: int

    def __post_init__(self):
        if self.m < 4:
            raise RejectedDataError("need at least 4 elements")
        if not self.a < self.b:
            raise RejectedDataError("need a < b")

    @property
    def h(self) -> float:
        return (self.b - self.a) / self.m

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.a, self.b, self.m + 1)

    @classmethod
    def for_data(cls, d: HermiteData1D, m: int) -> "Mesh1D":
        return cls(d.a, d.b, m)


@dataclass(frozen=True)
class ContinuationSchedule:
    ps: tuple[int, ...] = (2, 4, 12, 42, 202)
    tol: float = 1e-10
    max_iter: int = 400

    def __post_init__(self):
        ps = tuple(int(p) for p in self.ps)
        if not ps or ps[0] != 2:
            raise RejectedDataError("schedule must start at p = 2")
        if any(q <= p for p, q in zip(ps, ps[1:])):
            raise RejectedDataError("schedule must be strictly increasing")
        if any(p % 2 for p in ps):
            raise RejectedDataError("schedule entries must be even")
        object.__setattr__(self, "ps", ps)


def gauss_points(p: int) -> int:
    """Points per element: exact for |u''|^p while p/2 + 1 <= the cap."""
    return int(min(p // 2 + 1, MAX_GAUSS_POINTS))


def _shape_d2(xi: np.ndarray, h: float) -> np.ndarray:
    """Second derivatives of the cubic Hermite basis, columns (u0, u0', u1, u1')."""
    return np.stack([-6 + 12 * xi, h * (-4 + 6 * xi), 6 - 12 * xi, h * (-2 + 6 * xi)], axis=-1) / h**2


def _shape(xi: np.ndarray, h: float, order: int) -> np.ndarray:
    if order == 0:
        cols = [1 - 3 * xi**2 + 2 * xi**3, h * (xi - 2 * xi**2 + xi**3), 3 * xi**2 - 2 * xi**3, h * (-(xi**2) + xi**3)]
        return np.stack(cols, axis=-1)
    if order == 1:
        cols = [-6 * xi + 6 * xi**2, h * (1 - 4 * xi + 3 * xi**2), 6 * xi - 6 * xi**2, h * (-2 * xi + 3 * xi**2)]
        return np.stack(cols, axis=-1) / h
    if order == 2:
        return _shape_d2(xi, h)
    if order == 3:
        return np.broadcast_to(np.array([12.0, 6.0 * h, -12.0, 6.0 * h]) / h**3, xi.shape + (4,))
    raise ValueError(f"order must be 0..3, got {order}")


@dataclass(frozen=True, eq=False)
class HermiteCubic1D:
    """C^1 piecewise cubic given by nodal values and slopes."""

    mesh: Mesh1D
    dofs: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.dofs[0::2]

    @property
    def slopes(self) -> np.ndarray:
        return self.dofs[1::2]

    def __call__(self, x, order: int = 0):
        x = np.asarray(x, dtype=float)
        mesh = self.mesh
        e = np.clip(((x - mesh.a) / mesh.h).astype(int), 0, mesh.m - 1)
        xi = (x - (mesh.a + e * mesh.h)) / mesh.h
        N = _shape(xi, mesh.h, order)
        idx = 2 * e[..., None] + np.arange(4)
        out = np.sum(N * self.dofs[idx], axis=-1)
        return float(out) if out.ndim == 0 else out

    def sample(self, n: int) -> dict[str, np.ndarray]:
        x = np.linspace(self.mesh.a, self.mesh.b, n)
        return {"x": x, "u": self(x), "du": self(x, 1), "d2u": self(x, 2)}

    def second_derivative_field(self, per_element: int = 1) -> ScalarField:
        """u'' at ``per_element`` equispaced interior points of every element."""
        mesh = self.mesh
        k = per_element
        hs = mesh.h / k
        x = mesh.a + hs * (np.arange(mesh.m * k) + 0.5)
        return ScalarField((x.size,), (hs,), (x[0],), self(x, 2))


def _operator(mesh: Mesh1D, nq: int):
    """Sparse map from all DOFs to u'' at Gauss points, and quadrature weights."""
    xg, wg = np.polynomial.legendre.leggauss(nq)
    xi, wq = 0.5 * (xg + 1.0), 0.5 * wg
    B = _shape_d2(xi, mesh.h)  # (nq, 4)
    m = mesh.m
    rows = np.repeat(np.arange(m * nq), 4)
    cols = (2 * np.arange(m)[:, None, None] + np.arange(4)[None, None, :]).repeat(nq, axis=1).reshape(-1)
    vals = np.tile(B.reshape(-1), m)
    S = sp.csr_matrix((vals, (rows, cols)), shape=(m * nq, 2 * (m + 1)))
    w = np.tile(wq * mesh.h, m)
    return S, w


def _split(mesh: Mesh1D, d: HermiteData1D):
    n = 2 * (mesh.m + 1)
    fixed = np.array([0, 1, n - 2, n - 1])
    free = np.setdiff1d(np.arange(n), fixed)
    vals = np.array([d.A, d.Aprime, d.B, d.Bprime])
    return free, fixed, vals


def hermite_interpolant_dofs(mesh: Mesh1D, d: HermiteData1D) -> np.ndarray:
    from .core import cubic_hermite

    Q = cubic_hermite(d)
    x = mesh.nodes
    dofs = np.empty(2 * x.size)
    dofs[0::2], dofs[1::2] = Q(x), Q.deriv()(x)
    return dofs


def solve_p_1d(
    d: HermiteData1D,
    p: int,
    mesh: Mesh1D,
    init: HermiteCubic1D | np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 400,
) -> tuple[HermiteCubic1D, SolveReport]:
    """Discrete minimiser of ``int |u''|^p`` with clamped data.

    The start defaults to the cubic Hermite interpolant of the data, which
    is the exact p = 2 solution. Boundary DOFs are set to the data exactly.
    """
    if p < 2 or p % 2:
        raise RejectedDataError(f"p must be an even integer >= 2, got {p}")
    if (mesh.a, mesh.b) != (d.a, d.b):
        raise RejectedDataError("mesh and data intervals differ")
    S, w = _operator(mesh, gauss_points(p))
    free, fixed, fixed_vals = _split(mesh, d)
    if init is None:
        dofs0 = hermite_interpolant_dofs(mesh, d)
    else:
        dofs0 = np.array(init.dofs if isinstance(init, HermiteCubic1D) else init, dtype=float)
    M = S[:, free]
    c = S[:, fixed] @ fixed_vals
    x, report = minimize_power_sum(M, c, w, p, dofs0[free], tol=tol, max_iter=max_iter)
    dofs = np.empty(2 * (mesh.m + 1))
    dofs[free] = x
    dofs[fixed] = fixed_vals
    return HermiteCubic1D(mesh, dofs), report


@dataclass
class ContinuationResult:
    ps: list[int]
    solutions: list[HermiteCubic1D] = field(default_factory=list)
    reports: list[SolveReport] = field(default_factory=list)
    error: str | None = None

    @property
    def final(self) -> HermiteCubic1D:
        return self.solutions[-1]


def p_continuation(d: HermiteData1D, sched: ContinuationSchedule, mesh: Mesh1D) -> ContinuationResult:
    """Solve every stage of the schedule, each warm-started from the last.

    A failing stage stops the sweep; earlier stages are kept and the
    failure message is stored in ``error``.
    """
    out = ContinuationResult(list(sched.ps))
    state = None
    for p in sched.ps:
        try:
            u, rep = solve_p_1d(d, p, mesh, init=state, tol=sched.tol, max_iter=sched.max_iter)
        except ConvergenceError as exc:
            out.error = f"p={p}: {exc}"
            log.warning("continuation stopped: %s", out.error)
            break
        rep.breaks = detect_breaks(u.second_derivative_field())
        log.info("p=%d iterations=%d residual=%.3g", p, rep.iterations, rep.residual)
        out.solutions.append(u)
        out.reports.append(rep)
        state = u
    return out


def detect_breaks(d2: ScalarField, threshold: float | None = None, min_run: int = 3) -> list[dict]:
    """Sign changes of u'' between plateaus.

    Samples with ``|u''|`` below ``threshold`` (default half the median of
    ``|u''|``) are ignored, and runs shorter than ``min_run`` samples are
    merged into their neighbours, so oscillation near a jump does not
    produce extra breaks.
    """
    if d2.dim != 1:
        raise ValueError("break detection needs a 1D field")
    v = d2.grid
    x = d2.axis(0)
    if threshold is None:
        threshold = 0.5 * float(np.median(np.abs(v)))
    cls = np.where(v > threshold, 1, np.where(v < -threshold, -1, 0))
    kept = np.flatnonzero(cls)
    if kept.size == 0:
        return []
    # runs of equal sign among classified samples
    runs = []
    start = 0
    for k in range(1, kept.size + 1):
        if k == kept.size or cls[kept[k]] != cls[kept[start]]:
            runs.append([kept[start], kept[k - 1], cls[kept[start]], k - start])
            start = k
    changed = True
    while changed and len(runs) > 1:
        changed = False
        for r in range(len(runs)):
            if runs[r][3] < min_run:
                # absorb a short run into the longer neighbour
                if r == 0:
                    nb = 1
                elif r == len(runs) - 1:
                    nb = r - 1
                else:
                    nb = r - 1 if runs[r - 1][3] >= runs[r + 1][3] else r + 1
                lo, hi = sorted((r, nb))
                runs[lo] = [runs[lo][0], runs[hi][1], runs[nb][2], runs[lo][3] + runs[hi][3]]
                del runs[hi]
                changed = True
                break
        # merge equal-sign neighbours
        merged = [runs[0]]
        for run in runs[1:]:
            if run[2] == merged[-1][2]:
                merged[-1] = [merged[-1][0], run[1], run[2], merged[-1][3] + run[3]]
            else:
                merged.append(run)
        runs = merged
    breaks = []
    for left, right in zip(runs, runs[1:]):
        i0, i1 = left[1], right[0]
        seg = v[i0 : i1 + 1]
        # zero crossing closest to the middle of the gap
        cross = [k for k in range(seg.size - 1) if np.sign(seg[k]) != np.sign(seg[k + 1]) or seg[k] == 0]
        mid = 0.5 * (seg.size - 2)
        k = min(cross, key=lambda c: abs(c - mid)) if cross else int(mid)
        va, vb = seg[k], seg[k + 1]
        frac = va / (va - vb) if va != vb else 0.5
        loc = x[i0 + k] + frac * (x[i0 + k + 1] - x[i0 + k])
        lmed = float(np.median(v[left[0] : left[1] + 1]))
        rmed = float(np.median(v[right[0] : right[1] + 1]))
        breaks.append({"location": float(loc), "left_plateau": lmed, "right_plateau": rmed, "jump": rmed - lmed})
    return breaks
