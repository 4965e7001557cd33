"""Shared domain types: Hermite data, piecewise quadratics, energy integrands,
sampled fields and solver reports."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

MATCH_RTOL = 1e-12


class DomainError(ValueError):
    """Evaluation point outside the domain of a function."""


class RejectedDataError(ValueError):
    """Input data violates a constructor's precondition."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed; ``diagnostics`` holds the last state."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


# ---------------------------------------------------------------------------
# Hermite data


@dataclass(frozen=True)
class HermiteData1D:
    """Clamped boundary data u(a)=A, u(b)=B, u'(a)=Aprime, u'(b)=Bprime."""

    a: float
    b: float
    A: float
    B: float
    Aprime: float
    Bprime: float

    def __post_init__(self):
        vals = (self.a, self.b, self.A, self.B, self.Aprime, self.Bprime)
        if not all(math.isfinite(v) for v in vals):
            raise RejectedDataError(f"non-finite Hermite data {vals}")
        if not self.a < self.b:
            raise RejectedDataError(f"need a < b, got a={self.a}, b={self.b}")

    @property
    def length(self) -> float:
        return self.b - self.a

    @property
    def scale(self) -> float:
        return max(1.0, abs(self.A), abs(self.B), abs(self.Aprime), abs(self.Bprime))

    @property
    def value_defect(self) -> float:
        """B - A - A'(b - a): the part of B not explained by the tangent at a."""
        return self.B - self.A - self.Aprime * self.length

    def scaled(self, s: float) -> "HermiteData1D":
        return HermiteData1D(self.a, self.b, s * self.A, s * self.B, s * self.Aprime, s * self.Bprime)

    def as_tuple(self) -> tuple[float, ...]:
        return (self.a, self.b, self.A, self.B, self.Aprime, self.Bprime)

    @classmethod
    def from_function(cls, f: Callable[[float], float], df: Callable[[float], float], a: float, b: float):
        return cls(a, b, f(a), f(b), df(a), df(b))


def _test1_g(x):
    return (4 * x - 3) * (2 * x - 1) * (4 * x - 1) / 120.0


def _test1_dg(x):
    return (96 * x**2 - 96 * x + 22) / 120.0


# Cubic g(x) = (4x-3)(2x-1)(4x-1)/120 on (0, 1).
TEST1 = HermiteData1D(0.0, 1.0, -1.0 / 40.0, 1.0 / 40.0, 11.0 / 60.0, 11.0 / 60.0)


def hermite_defect(d: HermiteData1D) -> float:
    """Deviation of the data from quadratic interpolability.

    Zero exactly when some quadratic polynomial matches all four values.
    """
    h = d.length
    return (d.Bprime - d.Aprime) / h - 2.0 * d.value_defect / h**2


def cubic_hermite(d: HermiteData1D) -> np.polynomial.Polynomial:
    """The unique cubic Q with Q(a)=A, Q(b)=B, Q'(a)=A', Q'(b)=B'."""
    h = d.length
    # Q = A + A' s + c2 s^2 + c3 s^3 with s = x - a
    m = d.value_defect
    dm = d.Bprime - d.Aprime
    c3 = (dm * h - 2.0 * m) / h**3
    c2 = (3.0 * m - dm * h) / h**2
    shifted = np.polynomial.Polynomial([d.A, d.Aprime, c2, c3])
    # compose with s = x - a
    s = np.polynomial.Polynomial([-d.a, 1.0])
    return shifted(s)


# ---------------------------------------------------------------------------
# Piecewise quadratics


@dataclass(frozen=True)
class PiecewiseQuadratic:
    """C^1 function on [a, b] with constant second derivative on each piece.

    Piece ``k`` on ``[x_k, x_{k+1}]`` is ``c0 + c1 (x - x_k) + c2/2 (x - x_k)^2``
    where ``x_0 = a`` and the interior nodes are ``breakpoints``.
    """

    a: float
    b: float
    breakpoints: tuple[float, ...]
    pieces: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(x) for x in self.breakpoints))
        object.__setattr__(self, "pieces", tuple(tuple(float(c) for c in p) for p in self.pieces))
        if not self.a < self.b:
            raise RejectedDataError("need a < b")
        if len(self.pieces) != len(self.breakpoints) + 1:
            raise RejectedDataError("pieces count must be breakpoints count + 1")
        nodes = self.nodes
        if np.any(np.diff(nodes) <= 0):
            raise RejectedDataError(f"breakpoints must be sorted inside (a, b): {self.breakpoints}")
        for k, xk in enumerate(self.breakpoints):
            c0, c1, c2 = self.pieces[k]
            dx = xk - nodes[k]
            left = (c0 + c1 * dx + 0.5 * c2 * dx * dx, c1 + c2 * dx)
            right = self.pieces[k + 1][:2]
            for lv, rv in zip(left, right):
                if abs(lv - rv) > MATCH_RTOL * max(1.0, abs(lv), abs(rv)):
                    raise RejectedDataError(f"C1 matching violated at x={xk}: {left} vs {right}")

    @property
    def nodes(self) -> np.ndarray:
        return np.array((self.a, *self.breakpoints, self.b))

    @property
    def curvatures(self) -> np.ndarray:
        return np.array([p[2] for p in self.pieces])

    @property
    def lengths(self) -> np.ndarray:
        return np.diff(self.nodes)

    @classmethod
    def from_curvatures(cls, a, b, value, slope, breakpoints, curvatures):
        """Integrate piecewise-constant u'' forward from u(a), u'(a)."""
        nodes = (a, *breakpoints, b)
        pieces = []
        c0, c1 = float(value), float(slope)
        for k, c2 in enumerate(curvatures):
            pieces.append((c0, c1, float(c2)))
            dx = nodes[k + 1] - nodes[k]
            c0, c1 = c0 + c1 * dx + 0.5 * c2 * dx * dx, c1 + c2 * dx
        return cls(a, b, tuple(breakpoints), tuple(pieces))

    def piece_index(self, x) -> np.ndarray:
        """Index of the piece active at x; breakpoints belong to the right piece."""
        return np.searchsorted(np.asarray(self.breakpoints), x, side="right")

    def __call__(self, x, order: int = 0):
        return eval_piecewise_quadratic(self, x, order)

    def to_dict(self) -> dict:
        return {
            "domain": [self.a, self.b],
            "breakpoints": list(self.breakpoints),
            "pieces": [list(p) for p in self.pieces],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, obj: dict) -> "PiecewiseQuadratic":
        a, b = obj["domain"]
        return cls(a, b, tuple(obj["breakpoints"]), tuple(tuple(p) for p in obj["pieces"]))

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseQuadratic":
        return cls.from_dict(json.loads(text))


def eval_piecewise_quadratic(pq: PiecewiseQuadratic, x, order: int = 0):
    """Value, first or second derivative of ``pq`` at ``x`` (scalar or array).

    At a breakpoint the second derivative is the right-limit value; at ``b``
    it is the last piece's value.
    """
    if order not in (0, 1, 2):
        raise ValueError(f"order must be 0, 1 or 2, got {order}")
    xs = np.asarray(x, dtype=float)
    if np.any(xs < pq.a) or np.any(xs > pq.b) or np.any(~np.isfinite(xs)):
        raise DomainError(f"x outside [{pq.a}, {pq.b}]")
    idx = pq.piece_index(xs)
    coef = np.asarray(pq.pieces)[idx]
    dx = xs - pq.nodes[idx]
    c0, c1, c2 = coef[..., 0], coef[..., 1], coef[..., 2]
    if order == 0:
        out = c0 + c1 * dx + 0.5 * c2 * dx * dx
    elif order == 1:
        out = c1 + c2 * dx
    else:
        out = c2 + 0.0 * dx
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Energy integrands


class EnergySpec:
    """Integrand H of the supremal energy, acting on Hessian matrices.

    Matrices may be stacked: ``X`` has shape ``(..., n, n)``.
    """

    name = "abstract"

    def value(self, X):
        raise NotImplementedError

    def grad(self, X):
        raise NotImplementedError

    def as_custom1d(self) -> "Custom1D":
        raise NotImplementedError


@dataclass(frozen=True)
class FullHessianSq(EnergySpec):
    """H(X) = |X|^2 (Frobenius)."""

    name = "full"

    def value(self, X):
        X = np.asarray(X, dtype=float)
        return np.sum(X * X, axis=(-2, -1))

    def grad(self, X):
        return 2.0 * np.asarray(X, dtype=float)

    def as_custom1d(self) -> "Custom1D":
        return power_energy(1.0, 1.0, 2.0, name="sq")


@dataclass(frozen=True, eq=False)
class ProjectionSq(EnergySpec):
    """H(X) = (A:X)^2 for a fixed symmetric positive definite A.

    With A = I this is the squared Laplacian.
    """

    matrix: Any = None
    name = "projection"

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.matrix if self.matrix is not None else [[1.0]], dtype=float))
        if A.shape[0] != A.shape[1] or not np.allclose(A, A.T, atol=1e-12, rtol=0):
            raise RejectedDataError("projection matrix must be square and symmetric")
        if np.min(np.linalg.eigvalsh(A)) <= 0:
            raise RejectedDataError("projection matrix must be positive definite")
        A.flags.writeable = False
        object.__setattr__(self, "matrix", A)

    @classmethod
    def laplacian(cls, n: int = 2) -> "ProjectionSq":
        return cls(np.eye(n))

    def projection(self, X):
        return np.einsum("...ij,ij->...", np.asarray(X, dtype=float), self.matrix)

    def value(self, X):
        return self.projection(X) ** 2

    def grad(self, X):
        t = self.projection(X)
        return 2.0 * t[..., None, None] * self.matrix

    def as_custom1d(self) -> "Custom1D":
        if self.matrix.shape != (1, 1):
            raise RejectedDataError("only a 1x1 projection reduces to a scalar integrand")
        alpha = float(self.matrix[0, 0])
        return power_energy(alpha**2, alpha**2, 2.0, name=f"projection({alpha:g})")


@dataclass(frozen=True, eq=False)
class Custom1D(EnergySpec):
    """Scalar integrand H(t) for n = 1 with explicit level-set branches.

    ``t_minus(t) < 0 < t_plus(t)`` are the two solutions of ``H(X) = t``.
    """

    H: Callable[[float], float]
    Hprime: Callable[[float], float]
    t_minus: Callable[[float], float]
    t_plus: Callable[[float], float]
    name: str = "custom"
    check: bool = True

    def __post_init__(self):
        if self.check:
            self._validate()

    def _validate(self, samples: int = 41):
        H = self.H
        if abs(H(0.0)) > 1e-14:
            raise RejectedDataError("custom integrand must satisfy H(0) = 0")
        pos = np.geomspace(1e-3, 1e3, samples)
        hp = np.array([H(float(t)) for t in pos])
        hm = np.array([H(float(-t)) for t in pos])
        if np.any(hp <= 0) or np.any(np.diff(hp) <= 0):
            raise RejectedDataError("custom integrand must be strictly increasing on (0, inf)")
        if np.any(hm <= 0) or np.any(np.diff(hm) <= 0):
            raise RejectedDataError("custom integrand must be strictly decreasing on (-inf, 0)")
        for t in np.geomspace(1e-3, 1e3, 13):
            lo, hi = self.t_minus(float(t)), self.t_plus(float(t))
            if not lo < 0 < hi:
                raise RejectedDataError(f"level branches not separated at t={t}: {lo}, {hi}")
            for root in (lo, hi):
                if abs(H(root) - t) > 1e-10 * max(1.0, t):
                    raise RejectedDataError(f"branch does not invert H at t={t}")

    def value(self, X):
        X = np.asarray(X, dtype=float)
        t = X[..., 0, 0] if X.ndim >= 2 else X
        return np.vectorize(self.H, otypes=[float])(t)

    def grad(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim >= 2:
            return np.vectorize(self.Hprime, otypes=[float])(X[..., 0:1, 0:1])
        return np.vectorize(self.Hprime, otypes=[float])(X)

    def as_custom1d(self) -> "Custom1D":
        return self


def power_energy(c_plus: float, c_minus: float, r: float = 2.0, name: str | None = None) -> Custom1D:
    """H(t) = c_plus t^r for t >= 0 and c_minus |t|^r for t < 0."""
    if c_plus <= 0 or c_minus <= 0 or r <= 1:
        raise RejectedDataError("need positive weights and exponent r > 1")

    def H(t):
        return c_plus * t**r if t >= 0 else c_minus * (-t) ** r

    def Hprime(t):
        return r * c_plus * t ** (r - 1) if t >= 0 else -r * c_minus * (-t) ** (r - 1)

    return Custom1D(
        H,
        Hprime,
        lambda t: -((t / c_minus) ** (1.0 / r)),
        lambda t: (t / c_plus) ** (1.0 / r),
        name=name or f"power({c_plus:g},{c_minus:g},{r:g})",
    )


def scalar_energy(spec: EnergySpec) -> Custom1D:
    """Reduce an energy to its 1D scalar form."""
    return spec.as_custom1d()


# ---------------------------------------------------------------------------
# Sampled fields


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Samples on a uniform 1D grid or 2D tensor grid, row-major ``values``.

    For 2D, ``grid[i, j]`` is the sample at ``(origin[0] + i h0, origin[1] + j h1)``.
    """

    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    origin: tuple[float, ...]
    values: np.ndarray

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        spacing = tuple(float(h) for h in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(shape) not in (1, 2) or len(spacing) != len(shape) or len(origin) != len(shape):
            raise RejectedDataError("field must be 1D or 2D with matching spacing/origin")
        if any(h <= 0 for h in spacing):
            raise RejectedDataError("spacing must be positive")
        vals = np.array(self.values, dtype=float).reshape(-1)
        if vals.size != int(np.prod(shape)):
            raise RejectedDataError(f"{vals.size} values for shape {shape}")
        if not np.all(np.isfinite(vals)):
            raise RejectedDataError("field values must be finite")
        vals.flags.writeable = False
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def grid(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def axis(self, k: int) -> np.ndarray:
        return self.origin[k] + self.spacing[k] * np.arange(self.shape[k])

    def coordinates(self) -> tuple[np.ndarray, ...]:
        return np.meshgrid(*(self.axis(k) for k in range(self.dim)), indexing="ij")

    @classmethod
    def from_grid(cls, grid, spacing, origin) -> "ScalarField":
        grid = np.asarray(grid, dtype=float)
        spacing = tuple(np.atleast_1d(spacing).tolist())
        origin = tuple(np.atleast_1d(origin).tolist())
        return cls(grid.shape, spacing, origin, grid)

    @classmethod
    def sample(cls, f: Callable, lo: Sequence[float], hi: Sequence[float], n: Sequence[int]) -> "ScalarField":
        """Sample ``f`` (vectorised over coordinate arrays) on a closed box."""
        lo, hi, n = np.atleast_1d(lo), np.atleast_1d(hi), np.atleast_1d(n)
        spacing = (hi - lo) / (n - 1)
        axes = [lo[k] + spacing[k] * np.arange(n[k]) for k in range(len(n))]
        grids = np.meshgrid(*axes, indexing="ij")
        return cls(tuple(n), tuple(spacing), tuple(lo), np.asarray(f(*grids), dtype=float))

    def to_dict(self) -> dict:
        return {
            "dimension": self.dim,
            "shape": list(self.shape),
            "spacing": list(self.spacing),
            "origin": list(self.origin),
            "values": self.values.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "ScalarField":
        return cls(tuple(obj["shape"]), tuple(obj["spacing"]), tuple(obj["origin"]), np.asarray(obj["values"]))

    @classmethod
    def from_json(cls, text: str) -> "ScalarField":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        rows = self.grid if self.dim == 2 else self.grid[None, :]
        return format_csv(rows)

    @classmethod
    def from_csv(cls, text: str, spacing, origin) -> "ScalarField":
        rows = [[float(v) for v in row] for row in csv.reader(io.StringIO(text)) if row]
        grid = np.asarray(rows, dtype=float)
        if np.atleast_1d(spacing).size == 1 and grid.shape[0] == 1:
            grid = grid[0]
        return cls.from_grid(grid, spacing, origin)


def format_number(v: float) -> str:
    return repr(float(v))


def format_csv(rows, header: Sequence[str] | None = None) -> str:
    """Locale-free CSV with round-trip float formatting."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([format_number(v) for v in row])
    return out.getvalue()


# ---------------------------------------------------------------------------
# Solver diagnostics


@dataclass
class SolveReport:
    iterations: int
    residual: float
    energy: float
    converged: bool
    tolerance: float
    breaks: list[dict] | None = None
    p: float | None = None
    regularization: float = 0.0
    history: list[float] = field(default_factory=list)
    roundoff_floor: float = 0.0

    def __post_init__(self):
        if self.converged and not self.residual <= self.tolerance:
            raise ValueError("converged report must have residual <= tolerance")

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "iterations": int(self.iterations),
            "residual": float(self.residual),
            "energy": float(self.energy),
            "converged": bool(self.converged),
            "tolerance": float(self.tolerance),
            "regularization": float(self.regularization),
            "roundoff_floor": float(self.roundoff_floor),
            "breaks": self.breaks,
        }
