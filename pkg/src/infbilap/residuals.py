"""Pointwise and field-level evaluation of the third-order operator

    A(u) = H_X(D2u)^{x3} : (D3u)^{x2}

in expanded and contracted form, the supremal and averaged L^p energies,
the flow identity along sgn(V), V = H_X(D2u) grad(H(D2u)), and the
constant-level certificate H(D2u) = const.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import ndimage

from .core import Custom1D, EnergySpec, PiecewiseQuadratic, ProjectionSq, ScalarField

SYM_TOL = 1e-12


class CriticalPointError(ValueError):
    """The flow field V vanishes at the requested point."""


class StencilError(ValueError):
    """Point too close to the boundary for the finite-difference stencil."""


@dataclass(frozen=True, eq=False)
class JetSample:
    point: np.ndarray
    hessian: np.ndarray
    third: np.ndarray

    def __post_init__(self):
        H = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        T = np.asarray(self.third, dtype=float).reshape((H.shape[0],) * 3)
        n = H.shape[0]
        scale = max(1.0, np.max(np.abs(H)))
        if not np.allclose(H, H.T, atol=SYM_TOL * scale, rtol=0):
            raise ValueError("hessian must be symmetric")
        tscale = max(1.0, np.max(np.abs(T)))
        for perm in itertools.permutations(range(3)):
            if not np.allclose(T, T.transpose(perm), atol=SYM_TOL * tscale, rtol=0):
                raise ValueError("third-derivative tensor must be fully symmetric")
        object.__setattr__(self, "point", np.atleast_1d(np.asarray(self.point, dtype=float)))
        object.__setattr__(self, "hessian", H.reshape(n, n))
        object.__setattr__(self, "third", T)

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]


# ---------------------------------------------------------------------------
# derivative sources


@dataclass(frozen=True)
class AnalyticSource:
    """A function given by callables on points of shape (n,).

    Missing ``hessian``/``third`` callables are replaced by central
    differences of ``func`` with step ``step``.
    """

    func: Callable | None
    dim: int
    hessian: Callable | None = None
    third: Callable | None = None
    step: float = 1e-3

    def _offset_eval(self, x):
        x = np.asarray(x, dtype=float)
        return lambda k: float(self.func(x + self.step * np.asarray(k, dtype=float)))

    def hessian_at(self, x) -> np.ndarray:
        if self.hessian is not None:
            return np.asarray(self.hessian(np.asarray(x, dtype=float)), dtype=float).reshape(self.dim, self.dim)
        return _fd_hessian(self._offset_eval(x), (self.step,) * self.dim)

    def third_at(self, x) -> np.ndarray:
        if self.third is not None:
            return np.asarray(self.third(np.asarray(x, dtype=float)), dtype=float).reshape((self.dim,) * 3)
        if self.hessian is not None:
            # one derivative of the exact hessian, 4th-order accurate
            d = self.step
            T = np.zeros((self.dim,) * 3)
            for i in range(self.dim):
                e = np.zeros(self.dim)
                e[i] = d
                T[i] = _five_point(lambda t: self.hessian_at(np.asarray(x) + t * e), 1.0) / d
            return _symmetrize3(T)
        return _fd_third(self._offset_eval(x), (self.step,) * self.dim)


@dataclass(frozen=True)
class SampledSource:
    """Central differences on a sampled field, second-order accurate."""

    field: ScalarField

    @property
    def dim(self) -> int:
        return self.field.dim

    def index_of(self, x) -> tuple[int, ...]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        f = self.field
        idx = []
        for k in range(f.dim):
            r = (x[k] - f.origin[k]) / f.spacing[k]
            i = int(round(r))
            if abs(r - i) > 1e-6:
                raise StencilError(f"point {x} is not a grid node")
            idx.append(i)
        return tuple(idx)

    def _offset_eval(self, idx, margin: int):
        shape = self.field.shape
        for i, n in zip(idx, shape):
            if i < margin or i > n - 1 - margin:
                raise StencilError(f"node {idx} within {margin} cells of the boundary")
        g = self.field.grid
        base = np.asarray(idx)
        return lambda k: float(g[tuple(base + np.asarray(k, dtype=int))])

    def hessian_at(self, x, shift=None) -> np.ndarray:
        idx = np.asarray(self.index_of(x)) + (0 if shift is None else np.asarray(shift))
        return _fd_hessian(self._offset_eval(tuple(idx), 1), self.field.spacing)

    def third_at(self, x) -> np.ndarray:
        return _fd_third(self._offset_eval(self.index_of(x), 2), self.field.spacing)


def _unit(n, i, scale=1):
    e = np.zeros(n, dtype=int)
    e[i] = scale
    return e


def _fd_hessian(f, h) -> np.ndarray:
    n = len(h)
    H = np.empty((n, n))
    f0 = f(np.zeros(n, dtype=int))
    for i in range(n):
        ei = _unit(n, i)
        H[i, i] = (f(ei) - 2.0 * f0 + f(-ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = _unit(n, j)
            H[i, j] = H[j, i] = (f(ei + ej) - f(ei - ej) - f(-ei + ej) + f(-ei - ej)) / (4.0 * h[i] * h[j])
    return H


def _fd_third(f, h) -> np.ndarray:
    n = len(h)
    T = np.empty((n, n, n))
    for i, j, k in itertools.combinations_with_replacement(range(n), 3):
        ei, ej, ek = _unit(n, i), _unit(n, j), _unit(n, k)
        if i == j == k:
            v = (f(2 * ei) - 2.0 * f(ei) + 2.0 * f(-ei) - f(-2 * ei)) / (2.0 * h[i] ** 3)
        elif i == j or j == k:
            # pair index twice, single index once
            pair, single = (i, k) if i == j else (j, i)
            ep, es = _unit(n, pair), _unit(n, single)

            def g(o, es=es, hs=h[single]):
                return (f(o + es) - f(o - es)) / (2.0 * hs)

            z = np.zeros(n, dtype=int)
            v = (g(ep) - 2.0 * g(z) + g(-ep)) / h[pair] ** 2
        else:
            v = 0.0
            for si, sj, sk in itertools.product((1, -1), repeat=3):
                v += si * sj * sk * f(si * ei + sj * ej + sk * ek)
            v /= 8.0 * h[i] * h[j] * h[k]
        for perm in set(itertools.permutations((i, j, k))):
            T[perm] = v
    return T


def _symmetrize3(T) -> np.ndarray:
    return sum(T.transpose(p) for p in itertools.permutations(range(3))) / 6.0


def _five_point(phi: Callable[[float], np.ndarray], h: float):
    """Fourth-order central first derivative of phi at 0 (unit step ``h``)."""
    return (-phi(2 * h) + 8 * phi(h) - 8 * phi(-h) + phi(-2 * h)) / (12.0 * h)


def jet(src, x) -> JetSample:
    """Hessian and third-derivative tensor of ``src`` at ``x``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.size != src.dim:
        raise ValueError(f"point of dimension {x.size} for a {src.dim}-dimensional source")
    return JetSample(x, src.hessian_at(x), src.third_at(x))


# ---------------------------------------------------------------------------
# operator residuals


def _check_dim(spec: EnergySpec, n: int):
    if isinstance(spec, ProjectionSq) and spec.matrix.shape != (n, n):
        raise ValueError(f"projection matrix {spec.matrix.shape} does not match dimension {n}")
    if isinstance(spec, Custom1D) and n != 1:
        raise ValueError("scalar integrands are defined for n = 1 only")


def energy_gradient(spec: EnergySpec, hessian) -> np.ndarray:
    X = np.atleast_2d(np.asarray(hessian, dtype=float))
    return np.asarray(spec.grad(X), dtype=float).reshape(X.shape)


def residual_a2inf(j: JetSample, spec: EnergySpec) -> float:
    """Six-index contraction sum H_ij H_kl H_pq D3_ikl D3_jpq with H_. = H_X(D2u).

    Computed as v^T H_X v with v_i = H_kl D3_ikl.
    """
    _check_dim(spec, j.dim)
    HX = energy_gradient(spec, j.hessian)
    v = np.einsum("kl,ikl->i", HX, j.third)
    return float(v @ HX @ v)


def residual_index_loops(j: JetSample, spec: EnergySpec) -> float:
    """Plain six-fold loop over indices; reference for ``residual_a2inf``."""
    HX = energy_gradient(spec, j.hessian)
    D3 = j.third
    n = j.dim
    total = 0.0
    for i, jj, k, l, p, q in itertools.product(range(n), repeat=6):
        total += HX[i, jj] * HX[k, l] * HX[p, q] * D3[i, k, l] * D3[jj, p, q]
    return total


def polylaplacian(j: JetSample) -> float:
    """(D2u)^{x3} : (D3u)^{x2}."""
    X, D3 = j.hessian, j.third
    v = np.einsum("kl,ikl->i", X, D3)
    return float(v @ X @ v)


def bilaplacian_inf(j: JetSample) -> float:
    """(Lap u)^3 |grad Lap u|^2."""
    lap = np.trace(j.hessian)
    g = np.einsum("ikk->i", j.third)
    return float(lap**3 * (g @ g))


def _energy_field_gradient(src, x, spec: EnergySpec) -> tuple[np.ndarray, float]:
    """grad of y -> H(D2u(y)) at x by 4th-order central differences."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    n = src.dim
    phi0 = float(spec.value(np.atleast_2d(src.hessian_at(x))))
    g = np.empty(n)
    if isinstance(src, SampledSource):
        for i in range(n):
            phi = lambda k, i=i: float(spec.value(src.hessian_at(x, shift=_unit(n, i, int(k)))))  # noqa: E731
            g[i] = _five_point(phi, 1) / src.field.spacing[i]
    else:
        d = 10.0 * src.step
        for i in range(n):
            e = np.zeros(n)
            e[i] = 1.0
            phi = lambda t, e=e: float(spec.value(np.atleast_2d(src.hessian_at(x + t * e))))  # noqa: E731
            g[i] = _five_point(phi, d)
    return g, phi0


def residual_contracted(src, x, spec: EnergySpec) -> float:
    """H_X(D2u) : grad(H(D2u)) (x) grad(H(D2u)), gradient by finite differences."""
    _check_dim(spec, src.dim)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    HX = energy_gradient(spec, src.hessian_at(x))
    g, _ = _energy_field_gradient(src, x, spec)
    return float(g @ HX @ g)


@dataclass(frozen=True)
class FlowIdentity:
    lhs: float
    rhs: float
    speed: float

    @property
    def relative_gap(self) -> float:
        return abs(self.lhs - self.rhs) / max(abs(self.lhs), abs(self.rhs), np.finfo(float).tiny)


def flow_identity_residual(src: AnalyticSource, x, spec: EnergySpec, step: float | None = None) -> FlowIdentity:
    """Both sides of |V| d/dt H(D2u(gamma)) = A(u) along gamma' = sgn(V).

    ``V = H_X(D2u) grad(H(D2u))`` is taken from finite differences of the
    energy field; the time derivative is a finite difference along the ray
    through ``x`` in direction ``V/|V|``; the right side is the expanded
    residual from the jet.
    """
    if not isinstance(src, AnalyticSource):
        raise TypeError("the flow identity needs an analytic source")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    HX = energy_gradient(spec, src.hessian_at(x))
    g, phi0 = _energy_field_gradient(src, x, spec)
    V = HX @ g
    speed = float(np.linalg.norm(V))
    if speed <= 1e-12 * max(1.0, np.linalg.norm(HX)) * max(1.0, abs(phi0)):
        raise CriticalPointError(f"V vanishes at {x}")
    e = V / speed
    d = step if step is not None else 10.0 * src.step
    dphi = _five_point(lambda t: float(spec.value(np.atleast_2d(src.hessian_at(x + t * e)))), d)
    return FlowIdentity(speed * dphi, residual_a2inf(jet(src, x), spec), speed)


# ---------------------------------------------------------------------------
# energies


def _second_derivatives(field: ScalarField) -> np.ndarray:
    """Hessian samples on every node, one-sided second-order at the edges.

    Shape ``field.shape + (n, n)``.
    """
    u = field.grid
    n = field.dim
    out = np.empty(field.shape + (n, n))
    for i in range(n):
        out[..., i, i] = _d2_axis(u, field.spacing[i], axis=i)
        for j in range(i + 1, n):
            uij = np.gradient(np.gradient(u, field.spacing[i], axis=i, edge_order=2), field.spacing[j], axis=j, edge_order=2)
            out[..., i, j] = out[..., j, i] = uij
    return out


def _d2_axis(u, h, axis):
    u = np.moveaxis(u, axis, 0)
    if u.shape[0] < 4:
        raise StencilError("need at least 4 samples per axis")
    d2 = np.empty_like(u)
    d2[1:-1] = (u[:-2] - 2 * u[1:-1] + u[2:]) / h**2
    d2[0] = (2 * u[0] - 5 * u[1] + 4 * u[2] - u[3]) / h**2
    d2[-1] = (2 * u[-1] - 5 * u[-2] + 4 * u[-3] - u[-4]) / h**2
    return np.moveaxis(d2, 0, axis)


def energy_density(obj, spec: EnergySpec, kind: str = "u") -> np.ndarray:
    """H(D2u) on the nodes of a sampled field.

    ``kind="d2"`` means the field already holds u'' (1D) or the Laplacian
    (2D, requires a Laplacian projection spec).
    """
    if kind == "u":
        return np.asarray(spec.value(_second_derivatives(obj)), dtype=float)
    if kind != "d2":
        raise ValueError(f"unknown field kind {kind!r}")
    g = obj.grid
    if obj.dim == 1:
        return np.asarray(spec.value(g[..., None, None]), dtype=float)
    if not isinstance(spec, ProjectionSq):
        raise ValueError("a Laplacian field only determines projection energies")
    trace = np.trace(spec.matrix) / spec.matrix.shape[0]
    return (trace * g) ** 2


def _region_mask(field: ScalarField, region) -> np.ndarray:
    if region is None:
        mask = np.zeros(field.shape, dtype=bool)
        mask[(slice(1, -1),) * field.dim] = True
        return mask
    if isinstance(region, np.ndarray):
        return region.astype(bool).reshape(field.shape)
    lo, hi = region
    coords = field.coordinates()
    mask = np.ones(field.shape, dtype=bool)
    for k, c in enumerate(coords):
        mask &= (c >= np.atleast_1d(lo)[k]) & (c <= np.atleast_1d(hi)[k])
    return mask


def _pq_pieces_in(pq: PiecewiseQuadratic, region):
    lo, hi = (pq.a, pq.b) if region is None else region
    nodes = pq.nodes
    left, right = np.maximum(nodes[:-1], lo), np.minimum(nodes[1:], hi)
    keep = right > left
    return pq.curvatures[keep], (right - left)[keep]


def energy_sup(obj, spec: EnergySpec, region=None, kind: str = "u") -> float:
    """ess sup of H(D2u) over a region (interior nodes by default)."""
    scalar = _scalar_spec(spec)
    if isinstance(obj, PiecewiseQuadratic):
        curv, _ = _pq_pieces_in(obj, region)
        if curv.size == 0:
            raise ValueError("empty region")
        return float(max(scalar.H(float(c)) for c in curv))
    dens = energy_density(obj, spec, kind)
    mask = _region_mask(obj, region)
    if not mask.any():
        raise ValueError("empty region")
    return float(np.max(dens[mask]))


def energy_lp(obj, spec: EnergySpec, p: float, region=None, kind: str = "u") -> float:
    """(average of H(D2u)^p)^(1/p); trapezoid rule on fields, exact on piecewise quadratics."""
    if p < 1:
        raise ValueError("p must be >= 1")
    scalar = _scalar_spec(spec)
    if isinstance(obj, PiecewiseQuadratic):
        curv, lengths = _pq_pieces_in(obj, region)
        if curv.size == 0:
            raise ValueError("empty region")
        vals = np.array([scalar.H(float(c)) for c in curv])
        top = vals.max()
        if top == 0:
            return 0.0
        return float(top * (np.sum(lengths * (vals / top) ** p) / lengths.sum()) ** (1.0 / p))
    dens = energy_density(obj, spec, kind)
    w = np.ones(obj.shape)
    for k in range(obj.dim):
        wk = np.ones(obj.shape[k])
        wk[[0, -1]] = 0.5
        w = w * wk.reshape([-1 if i == k else 1 for i in range(obj.dim)])
    w = w * _region_mask(obj, region)
    top = np.max(dens[w > 0]) if np.any(w > 0) else 0.0
    if np.sum(w) == 0:
        raise ValueError("empty region")
    if top == 0:
        return 0.0
    return float(top * (np.sum(w * (dens / top) ** p) / np.sum(w)) ** (1.0 / p))


def _scalar_spec(spec):
    class _Adapter:
        def H(self, t):
            return float(spec.value(np.array([[t]])))

    if isinstance(spec, ProjectionSq) and spec.matrix.shape != (1, 1):
        return _Adapter()
    try:
        return spec.as_custom1d()
    except Exception:
        return _Adapter()


# ---------------------------------------------------------------------------
# constant-level certificate


@dataclass
class LevelCheck:
    passes: bool
    level: float
    max_deviation: float
    masked_fraction: float = 0.0
    signs: list[int] | None = None
    projection_values: list[float] | None = None

    def to_dict(self) -> dict:
        return {
            "passes": bool(self.passes),
            "level": float(self.level),
            "max_deviation": float(self.max_deviation),
            "masked_fraction": float(self.masked_fraction),
            "signs": self.signs,
            "projection_values": self.projection_values,
        }


def _weighted_median(vals, weights) -> float:
    order = np.argsort(vals)
    cum = np.cumsum(weights[order])
    return float(vals[order][np.searchsorted(cum, 0.5 * cum[-1])])


def _jump_mask(q: np.ndarray, width: int, threshold: float) -> np.ndarray:
    jumps = np.zeros(q.shape, dtype=bool)
    for ax in range(q.ndim):
        dq = np.abs(np.diff(q, axis=ax))
        sign_change = np.diff(np.sign(q), axis=ax) != 0
        big = (dq > threshold) | (sign_change & (dq > 0.1 * threshold))
        lo = [slice(None)] * q.ndim
        hi = [slice(None)] * q.ndim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        jumps[tuple(lo)] |= big
        jumps[tuple(hi)] |= big
    if width > 0 and jumps.any():
        jumps = ndimage.binary_dilation(jumps, iterations=width)
    return jumps


def dsolution_levelcheck(obj, spec: EnergySpec, tol: float = 1e-8, mask_width: int = 2, kind: str = "u") -> LevelCheck:
    """Is H(D2u) constant off the jump set of the second derivative?

    The level is the median over unmasked samples; samples within
    ``mask_width`` cells of a detected jump are excluded. For projection
    energies the projection A:D2u must also take at most two values.
    """
    if isinstance(obj, PiecewiseQuadratic):
        scalar = _scalar_spec(spec)
        curv = obj.curvatures[obj.lengths > 0]
        vals = np.array([scalar.H(float(c)) for c in curv])
        level = _weighted_median(vals, obj.lengths[obj.lengths > 0])
        dev = float(np.max(np.abs(vals - level)))
        return LevelCheck(dev <= tol, level, dev, 0.0, [int(np.sign(c)) for c in curv])

    if kind == "u":
        hess = _second_derivatives(obj)
        dens = np.asarray(spec.value(hess), dtype=float)
        if isinstance(spec, ProjectionSq):
            q = spec.projection(hess)
        else:
            q = hess[..., 0, 0] if obj.dim == 1 else np.trace(hess, axis1=-2, axis2=-1)
    else:
        dens = energy_density(obj, spec, kind)
        q = obj.grid
    interior = _region_mask(obj, None)
    if kind == "u":
        # one-sided edge stencils sit next to the boundary nodes
        interior = ndimage.binary_erosion(interior, iterations=1, border_value=0) if obj.dim == 2 else interior
    scale = np.median(np.abs(q[interior])) if interior.any() else 0.0
    masked = _jump_mask(q, mask_width, 0.25 * scale) if scale > 0 else np.zeros(q.shape, dtype=bool)
    keep = interior & ~masked
    if not keep.any():
        return LevelCheck(False, float("nan"), float("inf"), 1.0)
    level = float(np.median(dens[keep]))
    dev = float(np.max(np.abs(dens[keep] - level)))
    passes = dev <= tol
    proj_vals = None
    if isinstance(spec, ProjectionSq):
        qa = np.abs(q[keep])
        c = float(np.median(qa))
        proj_vals = sorted({float(np.round(v, 12)) for v in (c * np.sign(q[keep][np.abs(q[keep]) > 0]))})
        passes = passes and float(np.max(np.abs(qa - c))) <= np.sqrt(tol) * max(1.0, c)
    frac = 1.0 - keep.sum() / interior.sum()
    return LevelCheck(bool(passes), level, dev, float(frac), None, proj_vals)
