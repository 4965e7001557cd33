"""Exact one-dimensional constructions.

* quadratic and two-piece absolute minimisers of ``ess sup H(u'')`` with
  clamped data,
* the closed-form p-Biharmonic solution for even p,
* the three-piece critical-point solutions with ``|u''| = C``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .core import (
    ConvergenceError,
    Custom1D,
    EnergySpec,
    FullHessianSq,
    HermiteData1D,
    PiecewiseQuadratic,
    RejectedDataError,
    cubic_hermite,
    hermite_defect,
)

DEFECT_RTOL = 1e-10


class SearchFailure(RuntimeError):
    pass


def is_critical(d: HermiteData1D) -> bool:
    """True when the data is quadratic-interpolable up to roundoff."""
    return abs(hermite_defect(d)) < DEFECT_RTOL * d.scale


# ---------------------------------------------------------------------------
# Absolute minimisers


def quadratic_minimiser(d: HermiteData1D) -> PiecewiseQuadratic:
    E = hermite_defect(d)
    if abs(E) >= DEFECT_RTOL * d.scale:
        raise RejectedDataError(f"data is not quadratic-interpolable: defect E = {E:.6g}")
    c2 = (d.Bprime - d.Aprime) / d.length
    return PiecewiseQuadratic(d.a, d.b, (), ((d.A, d.Aprime, c2),))


@dataclass(frozen=True)
class HyperbolaConstants:
    """Curvature pairs (R, L) that C^1-match the data lie on
    ``(R - C1)(L - C2) = C1 C2 - C0^2``."""

    C0: float
    C1: float
    C2: float

    @property
    def discriminant(self) -> float:
        return self.C0**2 - self.C1 * self.C2

    def residual(self, R, L):
        return (R - self.C1) * (L - self.C2) - (self.C1 * self.C2 - self.C0**2)


def hyperbola_constants(d: HermiteData1D) -> HyperbolaConstants:
    h = d.length
    C0 = (d.Bprime - d.Aprime) / h
    C1 = 2.0 * (d.A - d.B - d.Bprime * (d.a - d.b)) / h**2
    C2 = 2.0 * d.value_defect / h**2
    return HyperbolaConstants(C0, C1, C2)


def matching_point(R: float, L: float, d: HermiteData1D) -> float:
    """Point where the left parabola (curvature L) and right one (R) meet C^1."""
    if L == R:
        raise RejectedDataError("matching point undefined for equal curvatures")
    return (d.Bprime - d.Aprime + d.a * L - d.b * R) / (L - R)


@dataclass(frozen=True)
class AbsoluteMinimiser:
    u: PiecewiseQuadratic
    xi: float | None
    left_curvature: float
    right_curvature: float
    level: float

    def __iter__(self):
        yield self.u
        yield self.xi


def _two_piece(d: HermiteData1D, R: float, L: float) -> tuple[PiecewiseQuadratic, float]:
    xi = matching_point(R, L, d)
    if not d.a < xi < d.b:
        raise SearchFailure(f"matching point {xi} outside ({d.a}, {d.b}) for R={R}, L={L}")
    # the right piece is anchored at b; re-expand it at xi
    dx = xi - d.b
    c0 = d.B + d.Bprime * dx + 0.5 * R * dx * dx
    c1 = d.Bprime + R * dx
    # left and right agree to roundoff only; snap the right piece onto the left
    left_c0 = d.A + d.Aprime * (xi - d.a) + 0.5 * L * (xi - d.a) ** 2
    left_c1 = d.Aprime + L * (xi - d.a)
    scale = max(1.0, abs(c0), abs(c1))
    if abs(c0 - left_c0) > 1e-9 * scale or abs(c1 - left_c1) > 1e-9 * scale:
        raise SearchFailure(f"pieces do not match at xi={xi}")
    u = PiecewiseQuadratic(d.a, d.b, (xi,), ((d.A, d.Aprime, L), (left_c0, left_c1, R)))
    return u, xi


def _sq_intersection(hc: HyperbolaConstants, E: float) -> tuple[float, float]:
    """Closed form for H(t) = t^2, where the level curve is L = -R."""
    diff = hc.C1 - hc.C2
    disc = math.sqrt(diff * diff + 4.0 * hc.C0**2)
    # E > 0: admissible branch has R >= C1 > C2 >= L; E < 0 mirrors it
    R = 0.5 * (diff + disc) if E > 0 else 0.5 * (diff - disc)
    return R, -R


def _level_intersection(spec: Custom1D, hc: HyperbolaConstants, E: float, t_max: float = 1.0) -> tuple[float, float]:
    """Intersect the level curve {H(L) = H(R), L R < 0} with the admissible branch.

    Along the level t the product (R - C1)(L - C2) is monotone on the
    admissible set, so the hyperbola residual has one sign change in t.
    """
    if E > 0:
        pair = lambda t: (spec.t_plus(t), spec.t_minus(t))  # noqa: E731
        t_lo = max(spec.H(max(hc.C1, 0.0)), spec.H(min(hc.C2, 0.0)))
    else:
        pair = lambda t: (spec.t_minus(t), spec.t_plus(t))  # noqa: E731
        t_lo = max(spec.H(min(hc.C1, 0.0)), spec.H(max(hc.C2, 0.0)))
    t_lo = max(t_lo, 1e-300)

    def f(t):
        R, L = pair(t)
        return hc.residual(R, L)

    f_lo = f(t_lo)
    if f_lo < 0:
        raise SearchFailure(f"hyperbola residual negative at the admissible start t={t_lo}")
    t_hi = max(t_max, 2.0 * t_lo)
    for _ in range(200):
        if f(t_hi) < 0:
            break
        t_lo, t_hi = t_hi, 2.0 * t_hi
    else:
        raise SearchFailure(f"no sign change of the hyperbola residual up to t={t_hi}")
    t_star = brentq(f, t_lo, t_hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500)
    return pair(t_star)


def absolute_minimiser(d: HermiteData1D, spec: EnergySpec | None = None) -> AbsoluteMinimiser:
    """Unique minimiser of ``ess sup H(u'')`` over functions with the data.

    Quadratic when the Hermite defect vanishes; otherwise two parabolas
    with opposite curvatures at equal H-level, joined C^1 at ``xi``.
    """
    spec = FullHessianSq() if spec is None else spec
    scalar = spec.as_custom1d()
    if is_critical(d):
        u = quadratic_minimiser(d)
        c = u.pieces[0][2]
        return AbsoluteMinimiser(u, None, c, c, float(scalar.H(c)))
    E = hermite_defect(d)
    hc = hyperbola_constants(d)
    if isinstance(spec, FullHessianSq):
        R, L = _sq_intersection(hc, E)
    else:
        R, L = _level_intersection(scalar, hc, E, t_max=max(1.0, hc.C0**2, hc.C1**2, hc.C2**2))
    u, xi = _two_piece(d, R, L)
    return AbsoluteMinimiser(u, xi, L, R, float(max(scalar.H(L), scalar.H(R))))


def brute_force_minimiser(d: HermiteData1D, spec: EnergySpec | None = None, step: float = 1e-4):
    """Grid search over the junction point of two C^1-matched parabolas.

    For every candidate junction the two curvatures follow from a 2x2 linear
    system; the best max-level wins. Returns ``(level, L, R, xi)``.
    """
    scalar = (FullHessianSq() if spec is None else spec).as_custom1d()
    xs = np.arange(d.a + step, d.b, step)
    el, er = xs - d.a, xs - d.b
    # L el^2/2 - R er^2/2 = B + B' er - A - A' el ;  L el - R er = B' - A'
    rhs1 = d.B + d.Bprime * er - d.A - d.Aprime * el
    rhs2 = d.Bprime - d.Aprime
    det = -0.5 * el**2 * er + 0.5 * er**2 * el
    L = (rhs1 * (-er) + 0.5 * er**2 * rhs2) / det
    R = (0.5 * el**2 * rhs2 - el * rhs1) / det
    H = np.vectorize(scalar.H, otypes=[float])
    level = np.maximum(H(L), H(R))
    k = int(np.argmin(level))
    return float(level[k]), float(L[k]), float(R[k]), float(xs[k])


# ---------------------------------------------------------------------------
# p-Biharmonic closed form


def _odd_root(s, m):
    return np.sign(s) * np.abs(s) ** m


@dataclass(frozen=True)
class PExactSolution:
    """Weak solution of ``(|u''|^{p-2} u'')'' = 0`` with clamped data.

    Non-critical data: ``u''(x) = kappa * r(x - z)`` with the odd root
    ``r(s) = sign(s)|s|^{1/(p-1)}``; equivalently ``|u''|^{p-2}u'' = lam x + mu``
    with ``lam = kappa^{p-1}`` and ``mu = -lam z``.
    """

    p: int
    branch: str
    data: HermiteData1D
    kappa: float = 0.0
    z: float = 0.0
    iterations: int = 0

    @property
    def lam(self) -> float:
        if self.branch == "critical":
            return 0.0
        return float(np.sign(self.kappa) * abs(self.kappa) ** (self.p - 1))

    @property
    def mu(self) -> float:
        if self.branch == "critical":
            c = (self.data.Bprime - self.data.Aprime) / self.data.length
            return float(np.sign(c) * abs(c) ** (self.p - 1))
        return -self.lam * self.z

    @property
    def singular_point(self) -> float | None:
        if self.branch == "noncritical" and self.data.a < self.z < self.data.b:
            return float(self.z)
        return None

    def __call__(self, x, order: int = 0):
        d = self.data
        x = np.asarray(x, dtype=float)
        if self.branch == "critical":
            c = (d.Bprime - d.Aprime) / d.length
            s = x - d.a
            out = (d.A + d.Aprime * s + 0.5 * c * s * s, d.Aprime + c * s, c + 0.0 * s)[order]
        else:
            m = 1.0 / (self.p - 1)
            k, z = self.kappa, self.z
            if order == 2:
                out = k * _odd_root(x - z, m)
            elif order == 1:
                out = d.Aprime + k * (_R(x - z, m) - _R(d.a - z, m))
            else:
                out = d.A + d.Aprime * (x - d.a) + k * (
                    _S(x - z, m) - _S(d.a - z, m) - (x - d.a) * _R(d.a - z, m)
                )
        return float(out) if np.ndim(out) == 0 else out

    def boundary_residual(self) -> float:
        d = self.data
        got = (self(d.a), self(d.b), self(d.a, 1), self(d.b, 1))
        want = (d.A, d.B, d.Aprime, d.Bprime)
        return max(abs(g - w) for g, w in zip(got, want))

    def system_residual(self) -> float:
        """Residual of the two algebraic compatibility equations for (lam, mu).

        Both equations are divided by ``p lam / (p - 1)`` so they read in
        the units of the data; the result is relative to ``data.scale``.
        """
        if self.branch == "critical":
            return 0.0
        d, p = self.data, self.p
        lam, mu = self.lam, self.mu
        q = p / (p - 1)
        f = (p - 1) / (p * lam)
        sa, sb = lam * d.a + mu, lam * d.b + mu
        # integral of |lam t + mu|^q over (a, b)
        G = lambda s: np.sign(s) * abs(s) ** (q + 1) / (q + 1)  # noqa: E731
        integral = (G(sb) - G(sa)) / lam
        r1 = f * (abs(sb) ** q - abs(sa) ** q) - (d.Bprime - d.Aprime)
        r2 = f * (integral - abs(sa) ** q * d.length) - d.value_defect
        return max(abs(r1), abs(r2)) / d.scale


def _R(s, m):
    """Even antiderivative of the odd root: |s|^{m+1}/(m+1)."""
    return np.abs(s) ** (m + 1) / (m + 1)


def _S(s, m):
    """Antiderivative of ``_R``."""
    return np.sign(s) * np.abs(s) ** (m + 2) / ((m + 1) * (m + 2))


def _moments(d: HermiteData1D, z: float, m: float):
    """I1 = int r(t-z) dt and I2 = int (b-t) r(t-z) dt over (a, b), with z-derivatives."""
    sa, sb = d.a - z, d.b - z
    I1 = _R(sb, m) - _R(sa, m)
    I2 = _S(sb, m) - _S(sa, m) - d.length * _R(sa, m)
    dI1 = -(_odd_root(sb, m) - _odd_root(sa, m))
    dI2 = d.length * _odd_root(sa, m) - I1
    return I1, I2, dI1, dI2


def _newton_pz(d: HermiteData1D, p: int, kappa: float, z: float, tol: float, max_iter: int):
    m = 1.0 / (p - 1)
    target = np.array([d.Bprime - d.Aprime, d.value_defect])
    scale = d.scale

    def F(k, zz):
        I1, I2, dI1, dI2 = _moments(d, zz, m)
        return np.array([k * I1, k * I2]) - target, np.array([[I1, k * dI1], [I2, k * dI2]])

    x = np.array([kappa, z], dtype=float)
    res, J = F(*x)
    norm = np.max(np.abs(res))
    for it in range(1, max_iter + 1):
        if norm <= tol * scale:
            return x[0], x[1], it - 1
        try:
            step = np.linalg.solve(J, -res)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular Jacobian", {"p": p, "kappa": x[0], "z": x[1]}) from exc
        t = 1.0
        while True:
            trial = x + t * step
            r_trial, J_trial = F(*trial)
            n_trial = np.max(np.abs(r_trial))
            if n_trial < norm or t < 1e-12:
                break
            t *= 0.5
        x, res, J, norm = trial, r_trial, J_trial, n_trial
    if norm <= tol * scale:
        return x[0], x[1], max_iter
    raise ConvergenceError(
        f"p-exact Newton did not converge at p={p}", {"p": p, "residual": float(norm), "kappa": x[0], "z": x[1]}
    )


def p_exact_solution(d: HermiteData1D, p: int, tol: float = 1e-14, max_iter: int = 60) -> PExactSolution:
    """Closed-form p-Biharmonic solution for even p >= 2.

    The zero z of ``|u''|^{p-2}u''`` and the amplitude ``kappa`` are found by
    damped Newton, starting from the cubic Hermite interpolant at p = 2 and
    continuing through every even exponent up to ``p``.
    """
    if p < 2 or p % 2:
        raise RejectedDataError(f"p must be an even integer >= 2, got {p}")
    if is_critical(d):
        return PExactSolution(p, "critical", d)
    # p = 2: u'' is affine, u'' = lam (x - z)
    Q2 = cubic_hermite(d).deriv(2)
    lam2 = Q2.coef[1] if len(Q2.coef) > 1 else 0.0
    if abs(lam2) < 1e-14 * d.scale / d.length**3:
        raise RejectedDataError("near-critical data: the affine second derivative has vanishing slope")
    kappa, z = lam2, -Q2.coef[0] / lam2
    total = 0
    for q in range(2, p + 1, 2):
        kappa, z, it = _newton_pz(d, q, kappa, z, tol, max_iter)
        total += it
    return PExactSolution(p, "noncritical", d, float(kappa), float(z), total)


# ---------------------------------------------------------------------------
# Critical-point solutions with |u''| = C


@dataclass(frozen=True)
class LevelFeasibility:
    feasible: bool
    margins: tuple[float, float]


def feasible_level(d: HermiteData1D, C: float) -> LevelFeasibility:
    """Check that the interval where u'' = +C fits inside [a, b].

    ``margins[0] <= 0`` iff its right end stays left of b, ``margins[1] <= 0``
    iff its left end stays right of a.
    """
    if not C > 0:
        raise RejectedDataError("energy level C must be positive")
    D, h, m = d.Bprime - d.Aprime, d.length, d.value_defect
    m1 = (D * D / (4 * C) + D * h / 2 - m) / C - h * h / 4
    m2 = (D * D / (4 * C) - D * h / 2 + m) / C - h * h / 4
    # the interval must also be nondegenerate: positive length
    positive = D + C * h > 0
    return LevelFeasibility(bool(m1 <= 0 and m2 <= 0 and positive), (float(m1), float(m2)))


@dataclass(frozen=True)
class CriticalPointSolution:
    C: float
    xC: float
    yC: float
    K: float
    L: float
    u: PiecewiseQuadratic


def critical_point_solution(d: HermiteData1D, C: float) -> CriticalPointSolution:
    """Piecewise quadratic with u'' = -C, +C, -C on (a, xC), (xC, yC), (yC, b)."""
    feas = feasible_level(d, C)
    if not feas.feasible:
        raise RejectedDataError(f"energy level C={C} infeasible: margins {feas.margins}")
    h = d.length
    K = (2.0 * d.value_defect + C * h * h) / (2.0 * C)
    L = (d.Bprime - d.Aprime + C * h) / (2.0 * C)
    xC = (-K - L * L + 2.0 * d.b * L) / (2.0 * L)
    yC = (-K + L * L + 2.0 * d.b * L) / (2.0 * L)
    xC, yC = max(xC, d.a), min(yC, d.b)
    breaks, curv = [], []
    if xC > d.a:
        breaks.append(xC)
        curv.append(-C)
    curv.append(C)
    if yC < d.b:
        breaks.append(yC)
        curv.append(-C)
    u = PiecewiseQuadratic.from_curvatures(d.a, d.b, d.A, d.Aprime, breaks, curv)
    return CriticalPointSolution(float(C), float(xC), float(yC), float(K), float(L), u)
