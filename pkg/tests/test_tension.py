import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kkgeom import models
from kkgeom.errors import DomainError, InputError, NumericError
from kkgeom.geometry import BaseChart, local_data
from kkgeom.hopf import HopfBundle, TwistedMap, chart_jet, twisted_tension
from kkgeom.tension import (
    DomainGrid, GridMap, MapJet, bundle_tension, curve_jet, dirichlet_energy, heat_flow,
    lorentz_charge_density, tension_field, vertical_residual,
)
from kkgeom.wong import WongState, WongSystem, integrate

from oracles import random_su2_model


def unit_sphere_chart():
    """Stereographic chart of the unit 2-sphere, metric 4 / (1 + r^2)^2."""
    def factor(x):
        return 4.0 / (1.0 + np.sum(x * x, -1)) ** 2

    def grad(x):
        return -16.0 * x / (1.0 + np.sum(x * x, -1))[..., None] ** 3

    return BaseChart.conformal(2, factor, grad, name="unit-sphere")


def clifford_grid_map(n, alpha):
    grid = DomainGrid.torus((n, n))
    return GridMap(grid, "sphere", TwistedMap(alpha)(grid.points()))


def perturbed_torus_map(n, alpha=np.pi / 6, amplitude=0.1):
    grid = DomainGrid.torus((n, n))
    th = grid.points()
    ca, sa = np.cos(alpha), np.sin(alpha)
    c1, s1, c2, s2 = np.cos(th[..., 0]), np.sin(th[..., 0]), np.cos(th[..., 1]), np.sin(th[..., 1])
    phi = np.stack([ca * c1, ca * s1, sa * c2, sa * s2], -1)
    normal = np.stack([-sa * c1, -sa * s1, ca * c2, ca * s2], -1)
    p = phi + amplitude * (s1 * c2 + 0.5 * np.cos(2 * th[..., 0]))[..., None] * normal
    p /= np.linalg.norm(p, axis=-1, keepdims=True)
    return GridMap(grid, "sphere", p)


def tangent_jet(jet: MapJet) -> MapJet:
    """Make a finite-difference jet an exact 2-jet of a sphere-valued map."""
    p = jet.values
    d1 = jet.d1 - np.einsum("...ik,...k->...i", jet.d1, p)[..., None] * p[..., None, :]
    normal = -np.einsum("...ik,...jk->...ij", d1, d1) - np.einsum("...ijk,...k->...ij", jet.d2, p)
    d2 = jet.d2 + normal[..., None] * p[..., None, None, :]
    return MapJet(p, d1, d2, jet.ginv, jet.gamma, jet.weights)


# ---------------------------------------------------------------------------
# energy

def test_constant_map_has_zero_energy_and_tension():
    grid = DomainGrid.torus((8, 8))
    rep = tension_field(GridMap(grid, "chart", np.ones((8, 8, 3))).jet())
    assert rep.energy == 0.0 and rep.sup == 0.0


def test_identity_of_flat_unit_torus_has_energy_one():
    grid = DomainGrid.torus((8, 8), (1.0, 1.0))
    jet = GridMap(grid, "chart", np.zeros((8, 8, 2)), affine=np.eye(2)).jet()
    assert dirichlet_energy(jet) == pytest.approx(1.0, abs=1e-14)
    assert tension_field(jet).sup == 0.0


def test_clifford_torus_energy_converges_at_second_order():
    # |d Phi|^2 = cos^2 + sin^2 = 1 pointwise, so E = 1/2 * (2 pi)^2
    exact = 2 * np.pi ** 2
    errs = [abs(dirichlet_energy(clifford_grid_map(n, np.pi / 4).jet()) - exact) for n in (32, 64, 128)]
    analytic = TwistedMap(np.pi / 4).ambient_jet(DomainGrid.torus((256, 256)).points(),
                                                 DomainGrid.torus((256, 256)).weights())
    assert dirichlet_energy(analytic) == pytest.approx(exact, rel=1e-13)
    for coarse, fine in zip(errs, errs[1:]):
        assert 3.7 < coarse / fine < 4.3


def test_finite_difference_jet_converges_at_second_order():
    errs = []
    for n in (32, 64):
        grid = DomainGrid.torus((n, n))
        tmap = TwistedMap(np.pi / 6)
        fd = GridMap(grid, "sphere", tmap(grid.points())).jet()
        _, d1, d2 = tmap.jet_at(grid.points())
        errs.append(max(np.max(np.abs(fd.d1 - d1)), np.max(np.abs(fd.d2 - d2))))
    assert 3.7 < errs[0] / errs[1] < 4.3


# ---------------------------------------------------------------------------
# tension of maps between manifolds

@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3, allow_nan=False), min_size=6, max_size=6))
def test_affine_maps_between_flat_tori_are_harmonic(entries):
    L = np.array(entries).reshape(3, 2)
    grid = DomainGrid.torus((6, 6))
    rep = tension_field(GridMap(grid, "chart", np.zeros((6, 6, 3)), affine=L).jet())
    assert rep.sup < 1e-12


def test_great_circle_through_chart_origin_is_harmonic():
    t = np.linspace(-1.0, 1.0, 2001)
    x = np.stack([np.tan(t / 2), np.zeros_like(t)], -1)
    rep = tension_field(curve_jet(t, x), unit_sphere_chart())
    g = unit_sphere_chart().g(x)
    norm = np.sqrt(np.einsum("...ab,...a,...b->...", g, rep.tension, rep.tension))
    # one-sided end stencils are first order in the second derivative
    assert norm[1:-1].max() < 1e-6
    assert norm.max() < 1e-5


@pytest.mark.parametrize("theta0", [0.3, np.pi / 4, 1.2, 2.0])
def test_latitude_circle_tension_both_routes(theta0):
    grid = DomainGrid.torus((2000,))
    t = grid.points()[..., 0]
    p = np.stack([np.sin(theta0) * np.cos(t), np.sin(theta0) * np.sin(t),
                  np.full_like(t, np.cos(theta0))], -1)
    expected = abs(np.sin(theta0) * np.cos(theta0))
    ambient = tension_field(GridMap(grid, "sphere", p).jet(), "sphere")
    np.testing.assert_allclose(np.linalg.norm(ambient.tension, axis=-1), expected, atol=1e-5)
    # stereographic projection from (0, 0, 1): radius cot(theta0 / 2)
    x = p[..., :2] / (1.0 - p[..., 2:])
    chart = tension_field(GridMap(grid, "chart", x).jet(), unit_sphere_chart())
    g = unit_sphere_chart().g(x)
    norm = np.sqrt(np.einsum("...ab,...a,...b->...", g, chart.tension, chart.tension))
    np.testing.assert_allclose(norm, expected, atol=1e-5)


def test_curve_tension_matches_covariant_acceleration_of_wong_path():
    model = HopfBundle("complex").as_local_model("north")
    traj = integrate(model, WongState(0.0, [0.3, -0.2], [0.5, 0.8], [0.7]), 1.0, h=1e-3)
    du, _ = WongSystem(model).accelerations(traj.x, traj.u, traj.v)
    acc = du + np.einsum("...rmn,...m,...n->...r", local_data(model, traj.x).gamma, traj.u, traj.u)
    grid = DomainGrid((len(traj.t),), (1e-3,), (False,))
    jet = GridMap(grid, "chart", traj.x, first=traj.u[:, None, :], second=du[:, None, None, :]).jet()
    rep = tension_field(jet, model.base)
    assert np.max(np.abs(rep.tension - acc)) < 1e-9
    # the Lorentz force bends the base curve
    assert rep.sup > 0.1


# ---------------------------------------------------------------------------
# bundle targets

def test_horizontal_lift_of_base_geodesic_has_zero_residuals():
    model = models.su2_bi_invariant()
    t = np.linspace(0.0, 1.0, 501)
    x = np.array([0.2, -0.1, 0.4]) + np.outer(t, [0.6, 0.3, -0.5])
    rep = bundle_tension(curve_jet(t, x, np.zeros((len(t), 3))), model)
    assert rep.horizontal_sup < 1e-6 and rep.vertical_sup < 1e-6


@pytest.mark.parametrize("field,charge", [(1.5, 0.8), (-0.7, 2.0)])
def test_wong_trajectory_has_small_bundle_residuals(field, charge):
    model = models.larmor(field)
    traj = integrate(model, WongState(0.0, [0.0, 0.0], [2.0, 0.0], [charge]), 2.0, h=1e-3)
    rep = bundle_tension(curve_jet(traj.t, traj.x, traj.v), model)
    interior = np.linalg.norm(rep.horizontal[1:-1], axis=-1)
    assert interior.max() < 1e-6
    assert rep.horizontal_sup < 1e-5
    assert rep.vertical_sup < 1e-6


def test_off_shell_curve_has_lorentz_residual():
    # a straight line with nonzero charge feels the force -kappa F u
    model = models.larmor(1.5)
    t = np.linspace(0.0, 1.0, 401)
    x = np.outer(t, [2.0, 0.0])
    rep = bundle_tension(curve_jet(t, x, np.full((len(t), 1), 0.8)), model)
    assert rep.horizontal_sup == pytest.approx(0.8 * 1.5 * 2.0, rel=1e-9)


def test_vertical_residual_matches_frame_tension_on_random_maps():
    rng = np.random.default_rng(5)
    model = random_su2_model(rng)
    grid = DomainGrid.box((9, 9), (0.0, 0.0), (1.0, 1.0))
    y = grid.points()
    a, b = rng.normal(size=(2, 3, 2)) * 0.4
    x = 0.3 * np.sin(y @ a.T) + 0.1 * (y @ b.T) ** 2
    c = rng.normal(size=(2, 2, 3))
    v = np.einsum("...i,ija->...ja", np.cos(y), c) + 0.2
    jet = GridMap(grid, "bundle", x, vertical=v).jet()
    rep = bundle_tension(jet, model)
    res = vertical_residual(jet, model)
    assert np.max(np.abs(rep.vertical)) > 1e-2
    assert np.max(np.abs(res - rep.vertical)) < 1e-10


def test_chart_and_ambient_routes_agree_on_non_harmonic_map():
    bundle = HopfBundle("complex")
    amb = tangent_jet(perturbed_torus_map(32).jet())
    ambient = bundle_tension(amb, bundle)
    assert ambient.sup > 1e-2
    for chart in ("south", "north"):
        jet = chart_jet(bundle, amb, chart)
        model = bundle.as_local_model(chart)
        rep = bundle_tension(jet, model)
        g = model.base.g(jet.x.values)
        hn = np.sqrt(np.einsum("...ab,...a,...b->...", g, rep.horizontal, rep.horizontal))
        np.testing.assert_allclose(hn, np.linalg.norm(ambient.horizontal, axis=-1), atol=1e-9)
        np.testing.assert_allclose(np.linalg.norm(rep.vertical, axis=-1),
                                   np.linalg.norm(ambient.vertical, axis=-1), atol=1e-9)


def test_twisted_torus_is_harmonic_with_vanishing_charge_only_at_quarter_pi():
    for alpha in (np.pi / 6, np.pi / 4, 1.2):
        for route in ("chart", "ambient"):
            assert twisted_tension(TwistedMap(alpha), 16, route=route).sup < 1e-12
    bundle = HopfBundle("complex")
    grid = DomainGrid.torus((16, 16))
    for alpha, zero in ((np.pi / 4, True), (np.pi / 6, False)):
        amb = TwistedMap(alpha).ambient_jet(grid.points(), grid.weights())
        _, norm = lorentz_charge_density(amb, bundle)
        assert (norm.max() < 1e-12) == zero


def test_charge_density_routes_agree():
    bundle = HopfBundle("complex")
    amb = tangent_jet(perturbed_torus_map(16).jet())
    _, ambient = lorentz_charge_density(amb, bundle)
    chart = "south"
    _, chart_norm = lorentz_charge_density(chart_jet(bundle, amb, chart), bundle.as_local_model(chart))
    np.testing.assert_allclose(chart_norm, ambient, atol=1e-9)


def test_horizontal_lift_has_zero_charge_density():
    model = models.su2_bi_invariant()
    t = np.linspace(0.0, 1.0, 51)
    jet = curve_jet(t, np.outer(t, [1.0, 0.5, 0.0]), np.zeros((51, 3)))
    _, norm = lorentz_charge_density(jet, model)
    assert norm.max() == 0.0


# ---------------------------------------------------------------------------
# input handling

def test_non_finite_values_raise_domain_error_with_index():
    grid = DomainGrid.torus((5, 5))
    vals = np.zeros((5, 5, 2))
    vals[2, 3, 1] = np.inf
    with pytest.raises(DomainError, match=r"\(2, 3\)"):
        GridMap(grid, "chart", vals)


def test_sphere_maps_must_have_unit_norm():
    grid = DomainGrid.torus((5, 5))
    with pytest.raises(InputError):
        GridMap(grid, "sphere", np.full((5, 5, 3), 0.5))


def test_bundle_jets_need_model_targets():
    jet = clifford_grid_map(8, 0.3).jet()
    with pytest.raises(InputError):
        tension_field(jet, models.larmor())
    with pytest.raises(InputError):
        bundle_tension(jet, models.larmor())


# ---------------------------------------------------------------------------
# heat flow

def test_heat_flow_keeps_harmonic_map_fixed():
    gmap = clifford_grid_map(16, np.pi / 4)
    h = gmap.grid.h_min
    out = heat_flow(gmap, "sphere", 0.1 * h ** 2, 50)
    assert np.max(np.abs(out.map.values - gmap.values)) < 1e-12
    assert np.ptp(out.energies) < 1e-12


def test_heat_flow_relaxes_perturbed_flat_torus_identity():
    grid = DomainGrid.torus((16, 16))
    y = grid.points()
    vals = np.stack([0.1 * np.sin(y[..., 1]), 0.1 * np.sin(y[..., 0] + y[..., 1])], -1)
    gmap = GridMap(grid, "chart", vals, affine=np.eye(2))
    dt = 0.1 * grid.h_min ** 2
    out = heat_flow(gmap, None, dt, 1000, record_every=100)
    assert np.all(np.diff(out.energies) <= 0)
    assert out.sup_tension[-1] < 1e-5
    assert out.energies[-1] == pytest.approx(4 * np.pi ** 2, rel=1e-8)


def test_heat_flow_sphere_energy_decreases():
    out = heat_flow(perturbed_torus_map(16, np.pi / 4, 0.05), "sphere",
                    0.1 * (2 * np.pi / 16) ** 2, 200, record_every=20)
    assert np.all(np.diff(out.energies) <= 1e-12)
    assert out.sup_tension[-1] < out.sup_tension[0]


def test_heat_flow_rejects_cfl_violation():
    gmap = clifford_grid_map(16, 0.5)
    with pytest.raises(InputError, match="CFL"):
        heat_flow(gmap, "sphere", 0.3 * gmap.grid.h_min ** 2, 10)


def test_heat_flow_reports_energy_increase():
    grid = DomainGrid.torus((16, 16))
    rng = np.random.default_rng(0)
    gmap = GridMap(grid, "chart", rng.normal(size=(16, 16, 2)))
    with pytest.raises(NumericError, match="energy increased"):
        heat_flow(gmap, None, 2.0 * grid.h_min ** 2, 20, cfl=10.0)


def test_heat_flow_map_leaving_chart_domain_raises():
    grid = DomainGrid.torus((8, 8))
    vals = np.zeros((8, 8, 2))
    vals[0, 0] = np.nan
    with pytest.raises(DomainError):
        heat_flow(GridMap(grid, "chart", vals), None, 0.01, 1)
