import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from infbilap.core import TEST1, FullHessianSq, ProjectionSq, ScalarField, power_energy
from infbilap.exact1d import absolute_minimiser, critical_point_solution
from infbilap.residuals import (
    AnalyticSource,
    CriticalPointError,
    JetSample,
    SampledSource,
    StencilError,
    bilaplacian_inf,
    dsolution_levelcheck,
    energy_lp,
    energy_sup,
    flow_identity_residual,
    jet,
    polylaplacian,
    residual_a2inf,
    residual_contracted,
    residual_index_loops,
)
from infbilap.suites import aronsson_hessian, aronsson_third, random_cubic, smooth_custom


@st.composite
def jets(draw, n=None):
    n = n or draw(st.sampled_from([1, 2, 3]))
    seed = draw(st.integers(min_value=0, max_value=2**31))
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    T = rng.normal(size=(n, n, n))
    T = sum(T.transpose(p) for p in [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6
    return JetSample(np.zeros(n), A + A.T, T)


def x4_source():
    return AnalyticSource(
        lambda x: x[0] ** 4 / 12, 1, hessian=lambda x: np.array([[x[0] ** 2]]), third=lambda x: np.array([2 * x[0]])
    )


# ---- pointwise operators


@given(jets())
@settings(max_examples=100, deadline=None)
def test_expanded_matches_index_loops(j):
    for spec in (FullHessianSq(), ProjectionSq.laplacian(j.dim)):
        a, b = residual_a2inf(j, spec), residual_index_loops(j, spec)
        assert a == pytest.approx(b, rel=1e-10, abs=1e-10)


@given(jets())
@settings(max_examples=100, deadline=None)
def test_specialisations(j):
    assert residual_a2inf(j, FullHessianSq()) == pytest.approx(8 * polylaplacian(j), rel=1e-10, abs=1e-10)
    assert residual_a2inf(j, ProjectionSq.laplacian(j.dim)) == pytest.approx(8 * bilaplacian_inf(j), rel=1e-10, abs=1e-10)


@given(st.integers(min_value=0, max_value=10**6), st.sampled_from([1, 2]))
@settings(max_examples=50, deadline=None)
def test_expanded_matches_contracted(seed, n):
    src, x = random_cubic(np.random.default_rng(seed), n)
    j = jet(src, x)
    specs = [FullHessianSq(), ProjectionSq.laplacian(n)] + ([smooth_custom()] if n == 1 else [])
    for spec in specs:
        e, c = residual_a2inf(j, spec), residual_contracted(src, x, spec)
        assert c == pytest.approx(e, rel=1e-6, abs=1e-9)


def test_x4_residual_value():
    # H = t^2: H'(u'') = 2x^2, u''' = 2x, so A = (2x^2)^3 (2x)^2
    j = jet(x4_source(), [1.0])
    assert residual_a2inf(j, FullHessianSq()) == pytest.approx(32.0)


def test_quadratic_residual_exact_zero():
    j = JetSample([0.0, 0.0], [[1.0, 2.0], [2.0, -5.0]], np.zeros((2, 2, 2)))
    assert residual_a2inf(j, FullHessianSq()) == 0.0
    assert residual_a2inf(j, ProjectionSq.laplacian(2)) == 0.0


def test_asymmetric_jet_rejected():
    with pytest.raises(ValueError):
        JetSample([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], np.zeros((2, 2, 2)))
    T = np.zeros((2, 2, 2))
    T[0, 0, 1] = 1.0
    with pytest.raises(ValueError):
        JetSample([0.0, 0.0], np.eye(2), T)


@given(st.floats(min_value=-1e-14, max_value=1e-14))
def test_roundoff_asymmetry_tolerated(eps):
    j = JetSample([0.0, 0.0], [[1.0, 0.5 + eps], [0.5, 1.0]], np.zeros((2, 2, 2)))
    assert j.dim == 2


def test_spec_dimension_mismatch():
    j = JetSample([0.0], [[1.0]], [[[1.0]]])
    with pytest.raises(ValueError):
        residual_a2inf(j, ProjectionSq.laplacian(2))
    with pytest.raises(ValueError):
        residual_a2inf(JetSample([0.0, 0.0], np.eye(2), np.zeros((2, 2, 2))), power_energy(1, 1))


def test_aronsson_hessian_at_one():
    H = aronsson_hessian(np.array([1.0, 1.0]))
    assert np.allclose(H, np.diag([84 / 25, -84 / 25]))
    fd = AnalyticSource(lambda x: abs(x[0]) ** 2.4 - abs(x[1]) ** 2.4, 2, step=1e-4)
    assert np.allclose(fd.hessian_at([1.0, 1.0]), H, atol=1e-5)


def test_aronsson_solves_polylaplacian():
    src = AnalyticSource(None, 2, hessian=aronsson_hessian, third=aronsson_third)
    for x in ([0.5, 1.5], [-1.0, 0.3], [2.0, -2.0]):
        j = jet(src, x)
        scale = np.linalg.norm(j.hessian) ** 3 * np.linalg.norm(j.third) ** 2
        assert abs(polylaplacian(j)) < 1e-12 * scale


# ---- sampled sources


def test_sampled_third_derivative():
    f = ScalarField.sample(lambda x: x**3, [0.0], [1.0], [1001])
    src = SampledSource(f)
    assert src.third_at([0.5])[0, 0, 0] == pytest.approx(6.0, abs=1e-6)
    assert src.hessian_at([0.5])[0, 0] == pytest.approx(3.0, abs=1e-6)


def test_sampled_mixed_third_derivative():
    f = ScalarField.sample(lambda x, y: x * x * y, [-1, -1], [1, 1], [41, 41])
    T = SampledSource(f).third_at([0.0, 0.5])
    assert T[0, 0, 1] == pytest.approx(2.0, abs=1e-9)
    assert T[1, 1, 1] == pytest.approx(0.0, abs=1e-9)


def test_sampled_stencil_near_boundary():
    f = ScalarField.sample(lambda x: x**3, [0.0], [1.0], [11])
    with pytest.raises(StencilError):
        SampledSource(f).third_at([0.1])
    with pytest.raises(StencilError):
        SampledSource(f).third_at([0.55])


# ---- flow identity


def test_flow_identity_x4():
    f = flow_identity_residual(x4_source(), [1.0], FullHessianSq())
    assert f.lhs == pytest.approx(32.0, rel=1e-8)
    assert f.rhs == pytest.approx(32.0, rel=1e-12)


@given(st.floats(min_value=0.2, max_value=3.0))
@settings(max_examples=30, deadline=None)
def test_flow_identity_noncritical_points(x):
    f = flow_identity_residual(x4_source(), [x], FullHessianSq())
    assert f.relative_gap < 1e-5


def test_flow_identity_critical_point():
    quad = AnalyticSource(lambda x: x[0] ** 2, 1, hessian=lambda x: np.array([[2.0]]))
    with pytest.raises(CriticalPointError):
        flow_identity_residual(quad, [0.3], FullHessianSq())


# ---- energies


def test_energy_sup_exact_minimiser():
    am = absolute_minimiser(TEST1)
    assert energy_sup(am.u, FullHessianSq()) == pytest.approx(64 / 225, abs=1e-14)
    assert energy_lp(am.u, FullHessianSq(), 7) == pytest.approx(64 / 225, abs=1e-14)


def test_energy_lp_x3():
    f = ScalarField.sample(lambda x: x**3, [0.0], [1.0], [2001])
    # H = 36 x^2 averages to 12
    assert energy_lp(f, FullHessianSq(), 1, region=np.ones(2001, dtype=bool)) == pytest.approx(12.0, rel=1e-5)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=30, deadline=None)
def test_energy_lp_monotone_in_p(seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=5)
    f = ScalarField.sample(lambda x: np.polynomial.polynomial.polyval(x, c), [0.0], [1.0], [201])
    spec = FullHessianSq()
    vals = [energy_lp(f, spec, p) for p in (1, 2, 4, 8, 16, 64, 256)]
    sup = energy_sup(f, spec)
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= sup * (1 + 1e-12)


# ---- constant-level certificate


def test_levelcheck_critical_point_solution():
    cp = critical_point_solution(TEST1, 1.0)
    check = dsolution_levelcheck(cp.u, FullHessianSq())
    assert check.passes and check.level == pytest.approx(1.0) and check.max_deviation == 0.0
    x = np.linspace(0, 1, 1201)
    from infbilap.core import eval_piecewise_quadratic

    f = ScalarField((x.size,), (x[1],), (0.0,), eval_piecewise_quadratic(cp.u, x))
    sampled = dsolution_levelcheck(f, FullHessianSq(), tol=1e-6)
    assert sampled.passes
    assert sampled.level == pytest.approx(1.0, abs=1e-6)


def test_levelcheck_rejects_cubic():
    f = ScalarField.sample(lambda x: x**3, [0.0], [1.0], [401])
    assert not dsolution_levelcheck(f, FullHessianSq()).passes


def test_levelcheck_two_phase_laplacian_2d():
    # u = +-(x^2 + y^2)/4 switching across x = 0 is C^1 with Laplacian +-1
    f = ScalarField.sample(lambda x, y: np.sign(x) * (x * x) / 2, [-1, -1], [1, 1], [81, 81])
    check = dsolution_levelcheck(f, ProjectionSq.laplacian(2), tol=1e-8)
    assert check.passes
    assert check.level == pytest.approx(1.0, abs=1e-8)
