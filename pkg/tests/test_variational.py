import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bundletc import covariant_calculus as cc
from bundletc import manifolds as mf
from bundletc import variational as var
from bundletc.errors import DomainNotInterval, NonAutonomousLagrangian, NotCritical, UsageError

S2 = mf.sphere2()
H2 = mf.half_plane()
E1 = mf.euclidean(1)
E2 = mf.euclidean(2)
T2 = mf.flat_torus2()


def curve(target, fwd, n=801, boundary="fixed", lag=None, jac=None):
    dom = var.Interval(0.0, 1.0, n)
    p = var.EnergyProblem(dom, E1, target, lag or var.kinetic(E1, target), boundary)
    return p, var.FieldConfiguration.from_map(dom, mf.SmoothMap("c", E1, target, fwd, jac))


def line(v, n=11):
    v = np.asarray(v, dtype=float)
    return curve(mf.euclidean(len(v)), lambda t: t * v, n=n,
                 jac=lambda t: np.broadcast_to(v[:, None], np.shape(t)[:-1] + (len(v), 1)))


def bent(t):
    t = t[..., 0]
    return np.stack([0.3 * t + 0.2 * np.sin(2 * t), 1.0 + 0.5 * t + 0.3 * t * t], -1)


def great_circle(t, speed=1.2, tilt=0.7):
    a = t[..., 0] * speed + 0.3
    v = np.stack([np.cos(a), np.sin(a) * np.cos(tilt), np.sin(a) * np.sin(tilt)], -1)
    return np.stack([np.arccos(v[..., 2]), np.arctan2(v[..., 1], v[..., 0])], -1)


def interior_variation(dom, c1=(0.4, -0.7), c2=(0.2, 0.1)):
    c1, c2 = np.asarray(c1), np.asarray(c2)
    return var.VariationField.from_fn(dom, lambda t: np.sin(np.pi * t[..., 0])[..., None] * c1
                                      + np.sin(2 * np.pi * t[..., 0])[..., None] * c2)


# -- energy ---------------------------------------------------------------------------


def test_straight_line_energy():
    v = np.array([0.6, -0.8]) * 1.5
    p, phi = line(v)
    assert abs(var.energy(p, phi) - 0.5 * 1.5**2) < 1e-12


def test_sphere_box_area():
    lo, hi = (0.2, 0.0), (np.pi - 0.2, 2 * np.pi - 0.2)
    dom = var.Rectangle(lo, hi, (401, 401))
    p = var.EnergyProblem(dom, S2, S2, var.kinetic(S2, S2))
    phi = var.FieldConfiguration(dom, dom.points(), jacobian=np.broadcast_to(np.eye(2), dom.shape + (2, 2)))
    area = (np.cos(lo[0]) - np.cos(hi[0])) * (hi[1] - lo[1])
    assert abs(var.energy(p, phi) - area) < 1e-4


def test_quadrature_order():
    errs = []
    for n in (51, 101, 201):
        p, phi = curve(H2, bent, n=n)
        errs.append(var.energy(p, phi))
    ratio = (errs[0] - errs[1]) / (errs[1] - errs[2])
    assert 3.5 < ratio < 4.5


def test_domain_validation():
    with pytest.raises(UsageError):
        var.Interval(0, 1, 7)
    with pytest.raises(UsageError):
        var.Rectangle((0, 0), (1, 1), (8, 5))
    with pytest.raises(UsageError):
        var.EnergyProblem(var.Interval(0, 1, 9), E2, S2, var.kinetic(E2, S2))
    with pytest.raises(UsageError):
        var.EnergyProblem(var.Interval(0, 1, 9), E1, S2, var.kinetic(E1, S2), "sliding")


# -- Lagrangians -----------------------------------------------------------------------


@pytest.mark.parametrize("name,M,S,params", [
    ("kinetic", H2, S2, {}),
    ("kinetic_potential", H2, S2, {"omega": 1.3, "center": [1.0, 0.5]}),
    ("anisotropic", E2, E2, {"W": np.einsum("ab,ij->aibj", [[2, 0.3], [0.3, 1]], [[1, 0.2], [0.2, 3]])}),
], ids=["kinetic", "kinetic_potential", "anisotropic"])
def test_exact_partials_match_connection_map(name, M, S, params, rng):
    L = var.make_lagrangian(name, M, S, **params)
    conn = cc.ConnectionMapData(M, S)
    for _ in range(5):
        x = np.array([rng.uniform(-1, 1), rng.uniform(0.5, 2)])
        s = np.array([rng.uniform(0.6, 2.5), rng.uniform(-1, 1)])
        A = rng.standard_normal((2, 2))
        Ls, Lm, Lv = cc.partial_covariant_derivatives(L.value, conn, x, s, A)
        assert np.max(np.abs(L.L_sigma(x, s, A) - Ls)) < 1e-5
        assert np.max(np.abs(L.L_mu(x, s, A) - Lm)) < 1e-5
        assert np.max(np.abs(L.L_v(x, s, A) - Lv)) < 1e-5


def test_unknown_lagrangian():
    with pytest.raises(UsageError):
        var.make_lagrangian("quartic", E1, S2)


def test_anisotropic_needs_flat_manifolds():
    W = np.eye(4).reshape(2, 2, 2, 2)
    L = var.anisotropic_quadratic(E2, S2, W)
    with pytest.raises(UsageError):
        var.EnergyProblem(var.Rectangle((0, 0), (1, 1), (9, 9)), E2, S2, L)


# -- first variation --------------------------------------------------------------------


def test_first_variation_vanishes_on_geodesic():
    # the fd side carries an O(h²) quadrature error of the weak form, hence the finer grid
    p, phi = curve(S2, great_circle, n=1601)
    for c1, c2 in [((1, 0), (0, 1)), ((0.3, -0.2), (-0.5, 0.4))]:
        f, fd = var.first_variation(p, phi, interior_variation(p.domain, c1, c2))
        assert abs(f) < 1e-6 and abs(fd) < 1e-6


def test_first_variation_non_critical():
    p, phi = curve(H2, bent)
    f, fd = var.first_variation(p, phi, interior_variation(p.domain))
    assert abs(f - fd) / abs(fd) < 1e-4


def test_first_variation_grid_mode():
    p, phi = curve(H2, bent)
    grid = var.FieldConfiguration(p.domain, phi.values)
    A = interior_variation(p.domain)
    A_grid = var.VariationField(A.values)
    f, fd = var.first_variation(p, grid, A_grid)
    assert abs(f - fd) / abs(fd) < 1e-4


def test_first_variation_free_boundary():
    p, phi = curve(H2, bent, boundary="free")
    A = var.VariationField.from_fn(p.domain, lambda t: np.exp(-20 * t[..., 0] ** 2)[..., None] * np.array([0.3, 0.5]))
    f, fd = var.first_variation(p, phi, A)
    assert abs(f - fd) / abs(fd) < 1e-4
    # the boundary term carries a visible share of the total
    Lv = p.lagrangian.L_v(p.domain.points(), phi.values, phi.map.jacobian_at(p.domain.points()))
    flux = var.boundary_flux(p, np.einsum("na,nai->ni", A.values, Lv))
    assert abs(flux) > 0.1 * abs(f)
    fixed = var.EnergyProblem(p.domain, p.M, p.S, p.lagrangian, "fixed")
    with pytest.raises(UsageError):
        var.first_variation_formula(fixed, phi, A)


def test_integration_by_parts_identity():
    p, phi = curve(H2, bent, boundary="free")
    A = var.VariationField.from_fn(p.domain, lambda t: np.stack([np.cos(3 * t[..., 0]), t[..., 0] ** 2], -1))
    weak = var.first_variation_weak(p, phi, A)
    strong = var.first_variation_formula(p, phi, A)
    assert abs(weak - strong) < 1e-5


@given(st.floats(-2, 2), st.floats(-2, 2))
@settings(max_examples=10)
def test_first_variation_linear(a, b):
    p, phi = curve(H2, bent, n=201)
    A = interior_variation(p.domain)
    B = interior_variation(p.domain, (0.1, 0.9), (-0.3, 0.0))
    lhs = var.first_variation_formula(p, phi, A * a + B * b)
    rhs = a * var.first_variation_formula(p, phi, A) + b * var.first_variation_formula(p, phi, B)
    assert abs(lhs - rhs) < 1e-8


def test_fixed_boundary_rejects_boundary_motion():
    p, phi = curve(H2, bent, n=51)
    V = var.VariationField.from_fn(p.domain, lambda t: np.ones_like(t) * np.array([1.0, 0.0]))
    with pytest.raises(UsageError):
        var.first_variation_formula(p, phi, V)


def test_variation_commutes_with_material_derivative():
    """The connection-map image of i ↦ ∇∘exp_φ(iA) at i = 0 is ∇A."""
    p, phi = curve(H2, bent, n=21)
    A = interior_variation(p.domain)
    conn = cc.ConnectionMapData(E1, H2)
    eps = 1e-4
    Jp = var.varied(p, phi, A * eps).map.jacobian_at(p.domain.points())
    Jm = var.varied(p, phi, A * (-eps)).map.jacobian_at(p.domain.points())
    x, s, J = p.domain.points(), phi.values, phi.map.jacobian_at(p.domain.points())
    vert = conn.v(x, s, J, np.zeros_like(x), A.values, (Jp - Jm) / (2 * eps))
    assert np.max(np.abs(vert - var.covariant_grad_variation(p, phi, A))) < 1e-5


# -- Euler-Lagrange residual --------------------------------------------------------------


def test_residual_is_lowered_geodesic_defect():
    p, phi = curve(H2, bent, n=101)
    res, _ = var.euler_lagrange_residual(p, phi)
    t = p.domain.points()
    s, v = phi.values, phi.map.jacobian_at(t)[..., 0]
    acc = cc.stencil5(lambda y: phi.map.jacobian_at(y)[..., 0], t)[..., 0]
    defect = acc + np.einsum("nabc,nb,nc->na", H2.christoffel_at(s), v, v)
    expect = -np.einsum("nab,nb->na", H2.metric_at(s), defect)
    assert np.max(np.abs(res[1:-1] - expect[1:-1])) < 1e-6
    assert np.max(np.abs(res)) > 0.1


def test_residual_convergence_ratio():
    errs = []
    for n in (101, 201, 401):
        dom = var.Interval(0.0, 1.0, n)
        p = var.EnergyProblem(dom, E1, S2, var.kinetic(E1, S2))
        res, _ = var.euler_lagrange_residual(p, var.FieldConfiguration(dom, great_circle(dom.points())))
        errs.append(np.max(np.abs(res)))
    for coarse, fine in zip(errs, errs[1:]):
        assert abs(coarse / fine - 4) < 0.5


def test_residual_is_negative_lowered_tension():
    dom = var.Rectangle((-0.5, 1.0), (0.5, 2.0), (21, 21))
    c = np.array([0.4, 0.3, -0.2])
    phi = mf.SmoothMap("phi", H2, S2, lambda x: np.stack(
        [1.5 + 0.3 * np.sin(c[0] * x[..., 0] + x[..., 1]), c[1] * x[..., 0] * x[..., 1] + c[2] * x[..., 1] ** 2], -1))
    p = var.EnergyProblem(dom, H2, S2, var.kinetic(H2, S2))
    res, _ = var.euler_lagrange_residual(p, var.FieldConfiguration.from_map(dom, phi))
    x = dom.points()
    tau = cc.tension_field(phi)(x)
    lowered = np.einsum("...ab,...b->...a", S2.metric_at(phi(x)), tau)
    inner = (slice(1, -1), slice(1, -1))
    assert np.max(np.abs(res[inner] + lowered[inner])) < 1e-5


def test_boundary_residual_on_free_interval():
    p, phi = curve(H2, bent, n=51, boundary="free")
    _, bnd = var.euler_lagrange_residual(p, phi)
    assert bnd.shape == (2, 2)
    t = np.array([[0.0], [1.0]])
    Lv = np.einsum("nab,nb->na", H2.metric_at(bent(t)), phi.map.jacobian_at(t)[..., 0])
    np.testing.assert_allclose(bnd, Lv * np.array([[-1.0], [1.0]]), atol=1e-9)


def test_check_critical():
    p, phi = curve(S2, great_circle, n=101)
    assert var.check_critical(p, phi) < 1e-5
    p, phi = curve(H2, bent, n=101)
    with pytest.raises(NotCritical):
        var.check_critical(p, phi)


# -- geodesics and the Hamiltonian ----------------------------------------------------------


def test_euclidean_geodesic_is_straight():
    g = var.solve_geodesic(E2, [1.0, 2.0], [0.5, -0.25], 2.0, h=1e-2)
    t = g.domain.points()
    np.testing.assert_allclose(g.values, [1.0, 2.0] + t * [0.5, -0.25], atol=1e-12)


def test_meridian_geodesic():
    T = np.pi / 2 - 0.2
    g = var.solve_geodesic(S2, [np.pi / 2, 0.0], [1.0, 0.0], T)
    np.testing.assert_allclose(g.values[-1], [np.pi - 0.2, 0.0], atol=1e-5)


def test_hamiltonian_conserved_on_geodesic():
    g = var.solve_geodesic(S2, [np.pi / 2 - 0.3, 0.1], [0.4, 0.9], np.pi)
    p = var.EnergyProblem(g.domain, E1, S2, var.kinetic(E1, S2))
    H = var.hamiltonian(p, g)
    assert np.max(np.abs(H - H[0])) / H[0] < 1e-8
    assert abs(H[0] - 0.5 * S2.norm(g.values[0], g.jacobian[0, :, 0]) ** 2) < 1e-12


def test_hamiltonian_varies_on_bent_curve():
    p, phi = curve(H2, bent, n=101)
    H = var.hamiltonian(p, phi)
    assert np.max(np.abs(H - H[0])) > 1e-3


def test_hamiltonian_of_straight_line():
    v = np.array([0.3, 1.1])
    p, phi = line(v)
    np.testing.assert_allclose(var.hamiltonian(p, phi), 0.5 * v @ v, atol=1e-14)


def test_hamiltonian_errors():
    dom = var.Rectangle((0, 0), (1, 1), (9, 9))
    p = var.EnergyProblem(dom, E2, E2, var.kinetic(E2, E2))
    with pytest.raises(DomainNotInterval):
        var.hamiltonian(p, var.FieldConfiguration(dom, dom.points()))
    timed = var.Lagrangian("timed", lambda x, s, A: (1 + x[..., 0]) * np.sum(A * A, axis=(-1, -2)))
    dom = var.Interval(0.0, 1.0, 11)
    p = var.EnergyProblem(dom, E1, E2, timed)
    with pytest.raises(NonAutonomousLagrangian):
        var.hamiltonian(p, var.FieldConfiguration(dom, np.hstack([dom.points(), dom.points()])))


def test_shooting_reaches_target():
    g = var.shoot_geodesic(S2, [1.0, 0.2], [1.8, 1.3], 1.0, 41)
    np.testing.assert_allclose(g.values[-1], [1.8, 1.3], atol=1e-9)
    p = var.EnergyProblem(g.domain, E1, S2, var.kinetic(E1, S2))
    assert np.ptp(var.hamiltonian(p, g)) < 1e-8


# -- harmonic flow ------------------------------------------------------------------------


def test_harmonic_fixed_point():
    dom = var.Rectangle((0, 0), (1, 1), (13, 13))
    p = var.EnergyProblem(dom, T2, T2, var.kinetic(T2, T2))
    X = dom.points()
    r = var.gradient_flow_harmonic(p, var.FieldConfiguration(dom, X), 5, 1e-3)
    assert np.max(np.abs(r.config.values - X)) < 1e-8
    assert r.tension_history[0] < 1e-8


def test_harmonic_flow_decreases_tension():
    k = 13
    dom = var.Rectangle((0, 0), (1, 1), (k, k))
    X = dom.points()
    bump = (np.sin(np.pi * X[..., 0]) * np.sin(np.pi * X[..., 1]))[..., None]
    p = var.EnergyProblem(dom, T2, T2, var.kinetic(T2, T2))
    r = var.gradient_flow_harmonic(p, var.FieldConfiguration(dom, X + 0.1 * bump * [1.0, 0.5]), 2000,
                                   0.1 / (k - 1) ** 2, tol=1e-6, record_every=50)
    assert r.tension_history[-1] < 1e-6
    assert np.all(np.diff(r.tension_history) <= 0)


def test_interval_flow_matches_shooting():
    n = 21
    dom = var.Interval(0.0, 1.0, n)
    t = dom.points()[:, 0]
    x0, x1 = np.array([1.0, 0.2]), np.array([1.8, 1.3])
    u0 = x0 + t[:, None] * (x1 - x0) + 0.1 * np.sin(np.pi * t)[:, None] * np.array([1.0, -1.0])
    p = var.EnergyProblem(dom, E1, S2, var.kinetic(E1, S2))
    r = var.gradient_flow_harmonic(p, var.FieldConfiguration(dom, u0), 20000, 1e-3, tol=1e-8)
    g = var.shoot_geodesic(S2, x0, x1, 1.0, n)
    assert np.max(np.abs(r.config.values - g.values)) < 1e-4


def test_flow_needs_fixed_boundary():
    dom = var.Interval(0.0, 1.0, 9)
    p = var.EnergyProblem(dom, E1, S2, var.kinetic(E1, S2), "free")
    with pytest.raises(UsageError):
        var.gradient_flow_harmonic(p, var.FieldConfiguration(dom, np.ones((9, 2))), 1, 1e-3)


# -- second variation -------------------------------------------------------------------------


@pytest.mark.parametrize("ell,sign", [(np.pi / 2, 1), (np.pi, 0), (1.5 * np.pi, -1)])
def test_index_form_values(ell, sign):
    p, phi = var.equator_geodesic(ell)
    A = var.VariationField.from_fn(p.domain, var.normal_sine(ell, 1))
    f, fd = var.second_variation(p, phi, A, A)
    expect = np.pi**2 / (2 * ell) - ell / 2
    assert abs(f - expect) < 1e-4
    assert (np.sign(round(f, 6)) or 0) == sign
    if sign:
        assert abs(f - fd) / abs(fd) < 1e-3
    else:
        assert abs(fd) < 1e-3


def test_spectrum_signs():
    for ell, negatives in [(np.pi / 2, 0), (1.5 * np.pi, 1)]:
        p, phi = var.equator_geodesic(ell, 201)
        ev = var.index_form_spectrum(p, phi, 4)
        assert np.sum(ev < 0) == negatives
    p, phi = var.equator_geodesic(np.pi, 201)
    assert abs(var.index_form_spectrum(p, phi, 4)[0]) < 1e-3


def test_second_variation_mixed_modes():
    ell = 2.0
    p, phi = var.equator_geodesic(ell)
    A = var.VariationField.from_fn(p.domain, var.normal_sine(ell, 1, (1.0, 0.3)))
    B = var.VariationField.from_fn(p.domain, lambda t: var.normal_sine(ell, 2)(t) + 0.5 * var.normal_sine(ell, 1)(t))
    f, fd = var.second_variation(p, phi, A, B)
    assert abs(f - fd) / abs(fd) < 1e-3
    assert abs(f - var.second_variation_formula(p, phi, B, A)) < 1e-6


def test_second_variation_flat_target():
    dom = var.Interval(0.0, 1.0, 201)
    p = var.EnergyProblem(dom, E1, E2, var.kinetic(E1, E2))
    phi = var.FieldConfiguration.from_map(dom, mf.SmoothMap("line", E1, E2, lambda t: t * [1.0, 2.0]))
    A = interior_variation(dom)
    B = interior_variation(dom, (0.2, 0.9), (1.0, 0.0))
    f, fd = var.second_variation(p, phi, A, B)
    assert abs(f - fd) < 1e-6
    DA, DB = var.covariant_grad_variation(p, phi, A), var.covariant_grad_variation(p, phi, B)
    assert abs(f - var._trapezoid(dom, np.einsum("nai,nai->n", DA, DB))) < 1e-12


def test_second_variation_bilinear():
    p, phi = var.equator_geodesic(2.0, 201)
    A = var.VariationField.from_fn(p.domain, var.normal_sine(2.0, 1))
    B = var.VariationField.from_fn(p.domain, var.normal_sine(2.0, 2, (0.5, 0.5)))
    lhs = var.second_variation_formula(p, phi, A * 2.0 + B, A)
    rhs = 2 * var.second_variation_formula(p, phi, A, A) + var.second_variation_formula(p, phi, B, A)
    assert abs(lhs - rhs) < 1e-10


def test_second_variation_with_potential():
    """Constant curve at the potential minimum: δ² = ∫ |A'|² − ω²|A|² in flat space."""
    dom = var.Interval(0.0, 1.0, 401)
    omega = 2.0
    L = var.kinetic_potential(E1, E2, omega=omega, center=[0.5, 0.5])
    p = var.EnergyProblem(dom, E1, E2, L)
    phi = var.FieldConfiguration.from_map(dom, mf.SmoothMap("c", E1, E2, lambda t: 0 * t + np.array([0.5, 0.5])))
    A = var.VariationField.from_fn(dom, var.normal_sine(1.0, 1, (1.0, 0.0)))
    f, fd = var.second_variation(p, phi, A, A)
    assert abs(f - (np.pi**2 - omega**2) / 2) < 1e-4
    assert abs(f - fd) / abs(fd) < 1e-3


def test_second_variation_requires_critical_point():
    p, phi = curve(H2, bent, n=101)
    A = interior_variation(p.domain)
    with pytest.raises(NotCritical):
        var.second_variation_formula(p, phi, A, A)


def test_second_variation_requires_exact_partials():
    dom = var.Interval(0.0, 1.0, 11)
    L = var.Lagrangian("bare", lambda x, s, A: np.sum(A * A, axis=(-1, -2)))
    p = var.EnergyProblem(dom, E1, E2, L)
    phi = var.FieldConfiguration(dom, np.hstack([dom.points(), dom.points()]))
    A = var.VariationField(np.zeros((11, 2)))
    with pytest.raises(UsageError):
        var.second_variation_formula(p, phi, A, A)


def test_index_form_needs_interval():
    dom = var.Rectangle((0, 0), (1, 1), (9, 9))
    p = var.EnergyProblem(dom, E2, E2, var.kinetic(E2, E2))
    with pytest.raises(DomainNotInterval):
        var.index_form_spectrum(p, var.FieldConfiguration(dom, dom.points()), 2)


# -- report -------------------------------------------------------------------------------


def test_variation_report_is_finite():
    p, phi = var.equator_geodesic(2.0, 101)
    A = var.VariationField.from_fn(p.domain, var.normal_sine(2.0, 1))
    d = var.variation_report(p, phi, A, A).to_dict()
    for key in ("energy", "first_variation_formula", "first_variation_fd",
                "second_variation_formula", "second_variation_fd", "el_residual_max"):
        assert np.isfinite(d[key])
    assert abs(d["energy"] - 1.0) < 1e-12
    assert len(d["hamiltonian_trace"]) == 101
