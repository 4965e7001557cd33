import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import infbilap.solver1d as s1
from infbilap.core import TEST1, ConvergenceError, HermiteData1D, RejectedDataError, ScalarField, cubic_hermite
from infbilap.exact1d import absolute_minimiser, p_exact_solution
from infbilap.core import eval_piecewise_quadratic
from infbilap.solver1d import (
    ContinuationSchedule,
    HermiteCubic1D,
    Mesh1D,
    detect_breaks,
    gauss_points,
    p_continuation,
    solve_p_1d,
)


@pytest.fixture(scope="module")
def test1_run():
    return p_continuation(TEST1, ContinuationSchedule(), Mesh1D(0.0, 1.0, 256))


def test_mesh_validation():
    with pytest.raises(RejectedDataError):
        Mesh1D(0.0, 1.0, 3)
    with pytest.raises(RejectedDataError):
        Mesh1D(1.0, 0.0, 8)


@pytest.mark.parametrize("ps", [(4, 12), (2, 2, 4), (2, 5), ()])
def test_schedule_validation(ps):
    with pytest.raises(RejectedDataError):
        ContinuationSchedule(ps)


def test_gauss_points_cap():
    assert gauss_points(2) == 2
    assert gauss_points(12) == 7
    assert gauss_points(202) == 10


def test_hermite_cubic_reproduces_cubic():
    mesh = Mesh1D(0.0, 1.0, 8)
    u = HermiteCubic1D(mesh, s1.hermite_interpolant_dofs(mesh, TEST1))
    Q = cubic_hermite(TEST1)
    x = np.linspace(0, 1, 37)
    for k in range(4):
        assert np.allclose(u(x, k), Q.deriv(k)(x), atol=1e-12)


def test_p2_equals_cubic_interpolant():
    mesh = Mesh1D(0.0, 1.0, 16)
    zero = np.zeros(2 * 17)
    u, rep = solve_p_1d(TEST1, 2, mesh, init=zero)
    Q = cubic_hermite(TEST1)
    assert rep.converged
    assert np.max(np.abs(u.values - Q(mesh.nodes))) < 1e-10


def test_boundary_dofs_bit_exact():
    u, _ = solve_p_1d(TEST1, 4, Mesh1D(0.0, 1.0, 32))
    assert (u.dofs[0], u.dofs[1], u.dofs[-2], u.dofs[-1]) == (TEST1.A, TEST1.Aprime, TEST1.B, TEST1.Bprime)


def test_mismatched_mesh_rejected():
    with pytest.raises(RejectedDataError):
        solve_p_1d(TEST1, 4, Mesh1D(0.0, 2.0, 8))
    with pytest.raises(RejectedDataError):
        solve_p_1d(TEST1, 3, Mesh1D(0.0, 1.0, 8))


def test_quadratic_data_all_stages():
    f = lambda x: 0.7 * x * x - 0.2 * x + 0.1  # noqa: E731
    d = HermiteData1D.from_function(f, lambda x: 1.4 * x - 0.2, 0.0, 1.0)
    res = p_continuation(d, ContinuationSchedule((2, 4, 12, 42)), Mesh1D(0.0, 1.0, 32))
    x = np.linspace(0, 1, 101)
    for u in res.solutions:
        assert np.max(np.abs(u(x) - f(x))) < 1e-8


def test_residual_below_tolerance():
    _, rep = solve_p_1d(TEST1, 12, Mesh1D(0.0, 1.0, 64), tol=1e-10)
    assert rep.converged
    assert rep.residual <= rep.tolerance


@pytest.mark.parametrize("p", [4, 12])
def test_energy_nonincreasing_under_refinement(p):
    energies = [solve_p_1d(TEST1, p, Mesh1D(0.0, 1.0, m))[1].energy for m in (8, 16, 32, 64)]
    assert all(b <= a * (1 + 1e-12) for a, b in zip(energies, energies[1:]))


@given(st.sampled_from([-2.0, 0.5, 2.0]))
@settings(max_examples=3, deadline=None)
def test_scale_equivariance(s):
    mesh = Mesh1D(0.0, 1.0, 32)
    u, _ = solve_p_1d(TEST1, 4, mesh)
    v, _ = solve_p_1d(TEST1.scaled(s), 4, mesh)
    assert np.allclose(v.dofs, s * u.dofs, atol=1e-9 * abs(s))


def test_converges_to_exact_solution():
    exact = p_exact_solution(TEST1, 4)
    errs = []
    for m in (16, 32, 64):
        mesh = Mesh1D(0.0, 1.0, m)
        u, _ = solve_p_1d(TEST1, 4, mesh)
        errs.append(np.max(np.abs(u.values - exact(mesh.nodes))))
    assert errs[0] > errs[1] > errs[2]
    assert 3.0 < errs[1] / errs[2] < 6.0


def test_continuation_flattens(test1_run):
    assert test1_run.error is None
    assert all(r.converged for r in test1_run.reports)
    brk = test1_run.reports[-1].breaks
    assert len(brk) == 1
    assert brk[0]["location"] == pytest.approx(0.5, abs=0.02)
    assert brk[0]["left_plateau"] == pytest.approx(-8 / 15, rel=0.1)
    assert brk[0]["right_plateau"] == pytest.approx(8 / 15, rel=0.1)


def test_distance_to_minimiser_decreases(test1_run):
    am = absolute_minimiser(TEST1)
    x = np.linspace(0, 1, 513)
    ustar = eval_piecewise_quadratic(am.u, x)
    dist = [np.max(np.abs(u(x) - ustar)) for u in test1_run.solutions]
    assert all(b < a for a, b in zip(dist, dist[1:]))


def test_failed_stage_keeps_earlier(monkeypatch):
    real = s1.solve_p_1d

    def flaky(d, p, mesh, **kw):
        if p == 12:
            raise ConvergenceError("synthetic failure", {"iteration": 0})
        return real(d, p, mesh, **kw)

    monkeypatch.setattr(s1, "solve_p_1d", flaky)
    res = p_continuation(TEST1, ContinuationSchedule((2, 4, 12, 42)), Mesh1D(0.0, 1.0, 16))
    assert len(res.solutions) == 2
    assert "p=12" in res.error


# ---- break detection


def _field(v):
    n = len(v)
    return ScalarField((n,), (1.0 / n,), (0.5 / n,), v)


def test_breaks_synthetic_step():
    x = (np.arange(200) + 0.5) / 200
    brk = detect_breaks(_field(np.where(x < 0.5, -8 / 15, 8 / 15)))
    assert len(brk) == 1
    assert brk[0]["location"] == pytest.approx(0.5, abs=1e-12)
    assert (brk[0]["left_plateau"], brk[0]["right_plateau"]) == pytest.approx((-8 / 15, 8 / 15))


def test_breaks_constant_field():
    assert detect_breaks(_field(np.full(50, 0.3))) == []


@given(st.floats(min_value=0.1, max_value=0.9), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=50, deadline=None)
def test_breaks_ignore_oscillation(loc, seed):
    rng = np.random.default_rng(seed)
    n = 256
    x = (np.arange(n) + 0.5) / n
    v = np.where(x < loc, -1.0, 1.0)
    # Gibbs-like ringing right at the jump
    k = np.searchsorted(x, loc)
    ring = slice(max(k - 2, 0), min(k + 2, n))
    v[ring] = v[ring] * -rng.uniform(0.6, 1.2, size=v[ring].size)
    v = v + 0.05 * rng.normal(size=n)
    brk = detect_breaks(_field(v))
    assert len(brk) == 1
    assert brk[0]["location"] == pytest.approx(loc, abs=3.0 / n)


def test_breaks_need_1d():
    with pytest.raises(ValueError):
        detect_breaks(ScalarField((2, 2), (1, 1), (0, 0), np.zeros(4)))
