"""Damped Newton for sum_k w_k |(M x + c)_k|^p with a Levenberg shift.

Both discrete solvers reduce to this form: ``M x + c`` is the discrete second
derivative (1D) or Laplacian (2D) at quadrature points, affine in the free
unknowns ``x``.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .core import ConvergenceError, SolveReport

log = logging.getLogger(__name__)


def relative_residual(M, c, w, p, x) -> float:
    """||M^T w phi(s)||_inf / || |M|^T w |phi(s)| ||_inf with phi(s) = |s|^{p-2} s.

    Scale-free measure of stationarity in [0, 1].
    """
    s = M @ x + c
    sig = np.max(np.abs(s))
    if sig == 0:
        return 0.0
    t = s / sig
    phi = w * np.abs(t) ** (p - 2) * t
    num = np.max(np.abs(M.T @ phi))
    den = np.max(abs(M).T @ np.abs(phi))
    return float(num / den) if den > 0 else 0.0


def roundoff_floor(M, c, p, x) -> float:
    """Attainable relative residual given cancellation in ``M x + c``.

    Each entry of ``s`` carries an error of about eps * (|M| |x| + |c|), and
    ``|s|^{p-1}`` amplifies its relative size by p.
    """
    s = M @ x + c
    sig = np.max(np.abs(s))
    if sig == 0:
        return 0.0
    scale = np.max(abs(M) @ np.abs(x) + np.abs(c))
    return float(p * np.finfo(float).eps * scale / sig)


def averaged_energy(s, w, p) -> float:
    """(sum w |s|^p / sum w)^(2/p): the averaged L^{p/2} norm of H = s^2.

    Equals c^2 when s is the constant c.
    """
    sig = float(np.max(np.abs(s)))
    if sig == 0:
        return 0.0
    return sig**2 * float(np.sum(w * np.abs(s / sig) ** p) / np.sum(w)) ** (2.0 / p)


def minimize_power_sum(
    M: sp.spmatrix,
    c: np.ndarray,
    w: np.ndarray,
    p: float,
    x0: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 200,
    shift0: float = 1e-12,
) -> tuple[np.ndarray, SolveReport]:
    M = sp.csr_matrix(M)
    MT = M.T.tocsr()
    x = np.array(x0, dtype=float)
    s = M @ x + c
    sig = float(np.max(np.abs(s))) or 1.0

    def energy(x):
        t = (M @ x + c) / sig
        with np.errstate(over="ignore"):
            return float(np.sum(w * np.abs(t) ** p))

    E = energy(x)
    # roundoff in sum |t|^p grows like p * eps
    noise = 16 * p * np.finfo(float).eps * E
    shift = shift0
    history = []
    res = relative_residual(M, c, w, p, x)
    floor = roundoff_floor(M, c, p, x)
    it = 0
    while res > max(tol, floor) and it < max_iter:
        it += 1
        t = (M @ x + c) / sig
        a = np.abs(t) ** (p - 2)
        g = MT @ (w * a * t)
        K = (p - 1) / sig * (MT @ sp.diags(w * a) @ M)
        dmax = float(K.diagonal().max()) or 1.0
        step_ok = False
        for _ in range(30):
            try:
                lu = splu((K + shift * dmax * sp.identity(K.shape[0])).tocsc())
                dx = -lu.solve(g)
            except RuntimeError:
                shift = max(10 * shift, 1e-12)
                continue
            # Armijo backtracking on the normalised energy
            slope = p * float(g @ dx) / sig
            if not slope < 0:
                shift = max(10 * shift, 1e-12)
                continue
            alpha = 1.0
            while alpha > 1e-10:
                E_new = energy(x + alpha * dx)
                if E_new <= E + 1e-4 * alpha * slope:
                    break
                # energy flat to roundoff: fall back to residual decrease
                if abs(E_new - E) <= noise and relative_residual(M, c, w, p, x + alpha * dx) < res:
                    break
                alpha *= 0.5
            else:
                shift = max(10 * shift, 1e-12)
                continue
            # Newton undershoots by ~1/(p-1) where |s|^p is flat: try longer steps
            if alpha == 1.0 and p > 2:
                while alpha < p:
                    E_try = energy(x + 2 * alpha * dx)
                    if not E_try < E_new - noise:
                        break
                    alpha, E_new = 2 * alpha, E_try
            step_ok = True
            break
        if not step_ok:
            raise ConvergenceError(
                f"line search failed at p={p}",
                {"iteration": it, "residual": res, "energy": E * sig**p, "shift": shift},
            )
        x = x + alpha * dx
        E = E_new
        shift = max(shift / 10, 1e-16) if alpha >= 1.0 else min(shift * 4, 1.0)
        res = relative_residual(M, c, w, p, x)
        floor = roundoff_floor(M, c, p, x)
        history.append(res)
    eff = max(tol, floor)
    if eff > tol:
        log.info("p=%g: tolerance %.3g raised to roundoff floor %.3g", p, tol, floor)
    report = SolveReport(
        iterations=it,
        residual=res,
        energy=averaged_energy(M @ x + c, w, p),
        converged=res <= eff,
        tolerance=eff,
        p=p,
        regularization=shift,
        history=history,
        roundoff_floor=floor,
    )
    return x, report
