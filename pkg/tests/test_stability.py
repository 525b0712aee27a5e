import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stablefrac.extension import ExtensionGrid, extend_poisson, field_from_function
from stablefrac.fracops import (TraceFunction, dirichlet_trace, exponential, linear, log_trace, power)
from stablefrac.gelfand import assemble_operator
from stablefrac.special import hardy_side, singular_lambda_closed_form
from stablefrac.stability import (EigenError, FlagError, GeometryError, LogPolarProbe, OperatorProbe,
                                  RadialCutoff, RegimeError, RegularizedPower, ResolutionError,
                                  SingularityWarning, SupportError, TestFunction, decay_sequences,
                                  fit_constant, geometric_stability_check, gradient_ratio,
                                  hessian_bound_check, holder_ratio, hs_ratio, lemma23_check,
                                  morrey_holder, pohozaev_check, radial_test_function,
                                  random_cutoffs, rayleigh_min, refinement_stable, stability_form,
                                  weighted_radial_estimate)

from conftest import middle_point


def flat_field(geometry="line", n=1, value=1.0, h=1 / 32):
    grid = ExtensionGrid.uniform(geometry, h=h)
    return field_from_function(geometry, n, grid, lambda X, Y: value + 0 * X,
                               lambda X, Y: (0 * X, 0 * X), lambda X, Y: (0 * X, 0 * X, 0 * X))


def bump(n=1, center=(0.0, 0.0), radius=0.5):
    """Smooth extended bump (1 - |Z - c|^2/r^2)_+^2."""
    cx, cy = center

    def val(px, py):
        d2 = ((px - cx) ** 2 + (py - cy) ** 2) / radius ** 2
        return np.where(d2 < 1, (1 - d2) ** 2, 0.0)

    def grad(px, py):
        d2 = ((px - cx) ** 2 + (py - cy) ** 2) / radius ** 2
        c = np.where(d2 < 1, -4 * (1 - d2) / radius ** 2, 0.0)
        return c * (px - cx), c * (py - cy)

    geo = "line" if n == 1 else "radial"
    return TestFunction("extended", n, geo, center, radius, val, grad)


# ---------------------------------------------------------------- cutoffs and test functions

def test_radial_cutoff_values_and_slopes():
    z = RadialCutoff.standard()
    assert z(0.3) == 1.0 and z(0.8) == 0.0
    assert z(0.625) == pytest.approx(0.5)
    assert z.derivative(0.6) == pytest.approx(-4.0)
    assert z.derivative(0.2) == 0.0 and z.derivative(0.9) == 0.0
    with pytest.raises(ValueError):
        RadialCutoff((0.0, 1.0), (1.0, 0.5))


def test_random_cutoffs_are_seeded_and_supported():
    a = random_cutoffs(20, 2, seed=7)
    b = random_cutoffs(20, 2, seed=7)
    assert a == b and len(a) == 20
    for eta in a:
        assert math.hypot(*eta.center) + eta.radius <= 0.9 + 1e-12
        assert eta(eta.radius) == 0.0


def test_regularized_power_is_flat_inside():
    eta = RegularizedPower(alpha=1.0, eps=0.01)
    assert eta(0.001) == pytest.approx(eta(0.01))
    assert eta.derivative(0.005) == 0.0
    assert eta(0.25) == pytest.approx(0.25 ** -0.5)


def test_test_function_validation():
    with pytest.raises(ValueError):
        TestFunction("extended", 1, "line")
    with pytest.raises(ValueError):
        TestFunction("bulk", 1, "line")


# ---------------------------------------------------------------- forms and probes

def test_form_with_zero_potential_is_dirichlet_energy():
    u = TraceFunction(np.linspace(-1, 1, 33), n=1, func=lambda x: 0 * np.asarray(x, float))
    xi = bump()
    f0 = linear(0.0, 0.0)
    q = stability_form(u, f0, xi, 0.5)
    # half disk integral of |grad (1 - r^2/R^2)^2|^2 is 16 pi int_0^1 t^3 (1 - t^2)^2 dt = 2 pi / 3
    ref = 2 * math.pi / 3
    assert q == pytest.approx(ref, rel=1e-6)
    assert q >= 0


def test_support_leak_is_rejected():
    u = TraceFunction(np.linspace(-1, 1, 33), n=1, func=lambda x: 0 * np.asarray(x, float))
    with pytest.raises(SupportError):
        stability_form(u, exponential(), bump(center=(0.8, 0.0), radius=0.5), 0.5)


def test_trace_kind_matches_operator_quadratic_form():
    op = assemble_operator(1, "line", 128)
    x = op.nodes
    U = (1 - x * x) ** 0.5 * (1 + 0.3 * x)
    xi = TestFunction("trace", 1, "line", trace=op.trace(U))
    u0 = TraceFunction(np.linspace(-1, 1, 9), n=1, func=lambda t: 0 * np.asarray(t, float))
    q = stability_form(u0, linear(0.0, 0.0), xi, 0.5)
    discrete = op.inner(U, op.matrix @ U)
    assert q == pytest.approx(discrete, rel=2e-2)


def test_zero_potential_probe_is_stable():
    op = assemble_operator(1, "line", 64)
    rep = rayleigh_min(None, linear(0.0, 0.0), 0.5, OperatorProbe(op, np.zeros(op.size)))
    assert rep.verdict == "stable" and rep.rayleigh_min > 0
    assert rep.pairing == "l2"
    # first Dirichlet eigenvalue of the half Laplacian on (-1, 1) is 1.15777; the scheme is first
    # order, so one Richardson step from 256 and 512 cells lands within 1e-3
    mu = [rayleigh_min(None, linear(0.0, 0.0), 0.5,
                       OperatorProbe(o, np.zeros(o.size))).rayleigh_min
          for o in (assemble_operator(1, "line", r) for r in (256, 512))]
    assert mu[1] < mu[0]
    assert 2 * mu[1] - mu[0] == pytest.approx(1.15777, rel=1e-3)


def test_pairing_choice_and_rejection():
    op = assemble_operator(1, "line", 32)
    probe = OperatorProbe(op, np.zeros(op.size))
    rep = rayleigh_min(None, exponential(), 0.5, probe)
    assert rep.pairing == "fprime"
    with pytest.raises(ValueError):
        rayleigh_min(None, linear(0.0, 0.0), 0.5, probe, pairing="fprime")
    with pytest.raises(ValueError):
        rayleigh_min(None, exponential(), 0.5, probe, pairing="energy")


def test_eigenvector_normalized_in_pairing(branch_line_exp):
    p = middle_point(branch_line_exp)
    op = branch_line_exp.operator
    f = exponential().scaled(p.lam)
    rep = rayleigh_min(None, f, 0.5, OperatorProbe(op, p.values))
    v = rep.eigenvector.values
    assert op.inner(v, f.fprime(p.values) * v) == pytest.approx(1.0)
    assert rep.quad_form_value == pytest.approx(rep.rayleigh_min, rel=1e-8)


def test_singular_solution_nine_is_stable_eight_is_not():
    out = {}
    for n in (8, 9):
        lam = singular_lambda_closed_form(n, 0.5)
        u = log_trace(n, 0.5, scale=1.0)
        out[n] = rayleigh_min(u, exponential().scaled(lam), 0.5, LogPolarProbe(n, eps=1e-12))
    assert out[9].verdict == "stable" and out[9].rayleigh_min >= -1e-3
    assert out[8].verdict == "unstable" and out[8].rayleigh_min < 0
    # Ritz values sit above the Hardy bound mu >= H/lambda - 1
    for n in (8, 9):
        bound = 2 * hardy_side(n, 0.5) / singular_lambda_closed_form(n, 0.5) - 1
        assert out[n].rayleigh_min >= bound - 1e-9
        assert out[n].rayleigh_min == pytest.approx(bound, abs=5e-3)


def test_logpolar_eigenvector_is_an_extended_probe():
    lam = singular_lambda_closed_form(8, 0.5)
    u = log_trace(8, 0.5, scale=1.0)
    f = exponential().scaled(lam)
    rep = rayleigh_min(u, f, 0.5, LogPolarProbe(8, eps=1e-4, tau_cells=60, theta_cells=16))
    xi = rep.eigenvector
    assert xi.kind == "extended"
    q = stability_form(u, f, xi, 0.5, angle_panels=8)
    # the quadrature of the form lands on the discrete eigenvalue (normalization 1)
    assert q == pytest.approx(rep.quad_form_value, abs=2e-2)
    assert q < 0


def test_post_fold_point_is_unstable(branch_line_exp):
    post = branch_line_exp.points[-1]
    assert post.mu_min < 0


# ---------------------------------------------------------------- radial test function

def test_radial_test_function_for_radial_field_matches_hand_formula():
    grid = ExtensionGrid.uniform("radial", h=1 / 32)
    v = lambda X, Y: np.exp(-X * X - Y)
    grad = lambda X, Y: (-2 * X * np.exp(-X * X - Y), -np.exp(-X * X - Y))
    hess = lambda X, Y: ((4 * X * X - 2) * np.exp(-X * X - Y), 2 * X * np.exp(-X * X - Y), np.exp(-X * X - Y))
    fld = field_from_function("radial", 2, grid, v, grad, hess)
    xi = radial_test_function(fld, eps=2.0 ** -6)
    px = np.array([0.1, 0.3, 0.45])
    py = np.array([0.2, 0.1, 0.05])
    R = np.hypot(px, py)
    hand = R ** -0.5 * (px * (-2 * px) + py * (-1.0)) * np.exp(-px * px - py)
    np.testing.assert_allclose(xi(px, py), hand, rtol=1e-6)


def test_radial_test_function_affine_has_finite_energy():
    grid = ExtensionGrid.uniform("radial", h=1 / 32)
    fld = field_from_function("radial", 2, grid, lambda X, Y: 2 * Y,
                              lambda X, Y: (0 * X, 2 + 0 * X), lambda X, Y: (0 * X, 0 * X, 0 * X))
    xi = radial_test_function(fld)
    e = xi.weighted_energy(0.5)
    assert np.isfinite(e) and e > 0


def test_radial_test_function_warns_on_coarse_regularization():
    fld = flat_field("radial", 2)
    with pytest.warns(SingularityWarning):
        radial_test_function(fld, eps=0.2)


def test_radial_test_function_gives_nonnegative_form(field_line_exp):
    xi = radial_test_function(field_line_exp)
    q = stability_form(field_line_exp.trace, field_line_exp.nonlinearity, xi, 0.5)
    assert q >= 0


def test_radial_test_function_gives_nonnegative_form_disk(field_disk_exp):
    xi = radial_test_function(field_disk_exp)
    assert stability_form(field_disk_exp.trace, field_disk_exp.nonlinearity, xi, 0.5) >= 0


# ---------------------------------------------------------------- integral identities

def test_radial_identity_constant_field_all_zero():
    r = lemma23_check(flat_field(), RadialCutoff.standard())
    assert r.parts == {"lhs1": 0.0, "lhs2": 0.0, "rhs": 0.0}
    assert r.holds


@pytest.mark.parametrize("fixture", ["field_line_exp", "field_disk_exp"])
def test_radial_identity_holds_on_branch_solution(fixture, request):
    fld = request.getfixturevalue(fixture)
    r = lemma23_check(fld, RadialCutoff.standard())
    assert r.holds and r.lhs < r.rhs


def test_radial_identity_with_regularized_power_cutoff(field_disk_exp):
    fld = field_disk_exp
    eta = RegularizedPower(alpha=fld.n - 2 * fld.s, eps=2.0 ** -6)
    r = lemma23_check(fld, eta)
    assert r.holds


@pytest.mark.parametrize("fixture", ["field_line_exp", "field_disk_exp"])
def test_pohozaev_identity(fixture, request):
    fld = request.getfixturevalue(fixture)
    r = pohozaev_check(fld, RadialCutoff.standard())
    assert r.lhs == pytest.approx(r.rhs, rel=1e-4)


def test_weighted_radial_estimate_regime():
    with pytest.raises(RegimeError):
        weighted_radial_estimate(flat_field("radial", 6))
    r = weighted_radial_estimate(flat_field("radial", 2))
    assert r.lhs == 0.0 and r.rhs == 0.0


def test_weighted_radial_estimate_bounded_along_branch(branch_disk_exp):
    ratios = []
    for p in branch_disk_exp.minimal()[1:]:
        fld = extend_poisson(p.solution, ExtensionGrid.uniform("radial", h=1 / 32))
        ratios.append(weighted_radial_estimate(fld).ratio)
    C = fit_constant(ratios[::2])
    assert all(C.admits(ratios))


# ---------------------------------------------------------------- geometric inequality

def test_geometric_affine_field_has_zero_lhs():
    grid = ExtensionGrid.uniform("line", h=1 / 32)
    fld = field_from_function("line", 1, grid, lambda X, Y: X + 2 * Y)
    fld.nonlinearity = exponential()
    r = geometric_stability_check(fld, RadialCutoff.standard())
    assert r.lhs <= 1e-12 and r.rhs > 0 and r.holds


def test_geometric_check_requires_convex_flags(field_line_exp):
    with pytest.raises(FlagError):
        geometric_stability_check(field_line_exp, RadialCutoff.standard(), f=linear(1.0, 1.0))


def test_geometric_check_on_random_cutoffs(field_disk_exp):
    for eta in random_cutoffs(6, 2, seed=3):
        r = geometric_stability_check(field_disk_exp, eta)
        assert r.holds


def test_geometric_thin_ring_probe_is_recorded(field_line_exp):
    eta = RadialCutoff((0.0, 0.7, 0.72), (1.0, 1.0, 0.0))
    r = geometric_stability_check(field_line_exp, eta)
    assert r.holds and 0 < r.ratio < 1


def test_hessian_bound_geometry_errors(field_line_exp):
    with pytest.raises(GeometryError):
        hessian_bound_check(field_line_exp, (0.3, 0.0), 0.5, 0.9)
    with pytest.raises(GeometryError):
        hessian_bound_check(field_line_exp, (0.0, 0.0), 0.6, 0.5)
    r = hessian_bound_check(flat_field(), (0.0, 0.0), 0.5, 0.9)
    assert r.lhs == 0.0 and r.rhs == 0.0


def test_hessian_bound_constant_stable_under_refinement(branch_disk_exp):
    p = middle_point(branch_disk_exp)
    vals = []
    for h in (1 / 32, 1 / 64):
        fld = extend_poisson(p.solution, ExtensionGrid.uniform("radial", h=h))
        vals.append(hessian_bound_check(fld, (0.0, 0.0), 0.675, 0.9).ratio)
    assert refinement_stable(vals[0], vals[1])
    fld = extend_poisson(p.solution, ExtensionGrid.uniform("radial", h=1 / 32))
    off = hessian_bound_check(fld, (0.2, 0.2), 0.3, 0.5)
    assert 0 < off.ratio < 10


# ---------------------------------------------------------------- decay and Hoelder pipeline

def test_decay_sequences_constant_is_degenerate():
    d = decay_sequences(flat_field("radial", 2, h=1 / 64))
    assert d.degenerate and d.alpha is None
    assert np.all(d.a == 0) and np.all(d.b == 0)


def test_decay_sequences_resolution_error():
    with pytest.raises(ResolutionError):
        decay_sequences(flat_field("radial", 2, h=1 / 16), J=5)


def test_decay_sequences_on_branch(field_disk_exp):
    d = decay_sequences(field_disk_exp)
    assert d.nonincreasing
    assert 0 < d.theta < 1 and d.alpha > 0
    # v_y(0) != 0 makes b_j decay like 4^{-j}
    assert d.theta == pytest.approx(0.25, abs=0.05)
    L = d.recurrence_constant()
    assert np.all(d.a[1:] + d.b[1:] <= L * d.a[:-1] * (1 + 1e-12))
    assert all(ok for _, _, ok in d.dichotomy(max(d.dichotomy_constant(), 1.0)))


def test_morrey_constant_field_is_trivial():
    fld = flat_field("radial", 2, h=1 / 32)
    fld.trace = TraceFunction(np.linspace(0, 1, 9), n=2, geometry="radial", func=lambda x: 1 + 0 * np.asarray(x))
    m = morrey_holder(fld, 0.1, 0.1, 0.5)
    assert m.bound == 0.0 and m.deviation == pytest.approx(0.0, abs=1e-12) and m.quotient == 0.0


def test_morrey_bound_on_branch(field_disk_exp):
    m = morrey_holder(field_disk_exp, 0.1, 0.1, 0.5)
    assert m.passes


def test_morrey_certificate_failure(field_disk_exp):
    from stablefrac.stability import CertificateError
    with pytest.raises(CertificateError):
        morrey_holder(field_disk_exp, 0.1, 0.1, 0.5, C1=1e-9)


def test_holder_ratio_conventions():
    zero = TraceFunction(np.linspace(-1, 1, 9), n=1, func=lambda x: 0 * np.asarray(x, float))
    assert holder_ratio(zero, 0.5) == 0.0
    c = dirichlet_trace(np.linspace(-1, 1, 65), np.sqrt(np.maximum(1 - np.linspace(-1, 1, 65) ** 2, 0)))
    r = holder_ratio(c, 0.5)
    assert r > 0


def test_holder_ratio_scaling_audit(branch_line_exp):
    # rescaling u_R(x) = u(Rx) multiplies the seminorm by R^alpha on matched pairs
    p = middle_point(branch_line_exp)
    u = p.solution
    a = holder_ratio(u, 0.5)
    b = holder_ratio(u.rescaled(0.5), 0.5)
    assert 0 < b < a * 2 + 1


def test_universal_ratios_bounded_along_branch(branch_disk_exp):
    hs = np.array([hs_ratio(p.solution) for p in branch_disk_exp.minimal()[1:]])
    assert np.all(np.isfinite(hs)) and np.all(hs > 0) and hs.max() < 0.2
    C = fit_constant(hs)
    assert all(C.admits(hs)) and C.value == pytest.approx(1.2 * hs.max())


def test_gradient_ratio_bounded(field_disk_exp):
    assert 0 < gradient_ratio(field_disk_exp) < 10


def test_fit_constant_protocol():
    C = fit_constant([1.0, 2.0, 1.5])
    assert C.value == pytest.approx(2.4) and C.count == 3
    assert refinement_stable(1.0, 1.19) and not refinement_stable(1.0, 1.3)
    with pytest.raises(ValueError):
        fit_constant([])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 16))
def test_random_cutoff_family_is_lipschitz(seed):
    for eta in random_cutoffs(5, 1, seed=seed):
        d = np.linspace(0, eta.radius, 200)
        v = eta(d)
        assert np.all(np.isfinite(eta.derivative(d)))
        assert v[0] == 1.0 and eta(eta.radius + 1e-9) == 0.0
