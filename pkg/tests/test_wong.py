import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kkgeom import hopf, models
from kkgeom.errors import InputError
from kkgeom.geometry import kk_metric_components, local_data
from kkgeom.wong import (
    IntegrationError, WongState, WongSystem, charges, conserved_energy, energy_drift, integrate,
    projected_curvature, trajectory_csv, trajectory_header, wong_rhs,
)

from oracles import coordinate_geodesic, random_su2_model


def larmor_circle(B, k, u0, t):
    """Closed-form solution of u' = k B J u from x = 0 (J the rotation (a, b) -> (b, -a))."""
    w = k * B
    c, s = np.cos(w * t), np.sin(w * t)
    u = np.stack([c * u0[0] + s * u0[1], -s * u0[0] + c * u0[1]], -1)
    x = np.stack([(s * u0[0] + (1 - c) * u0[1]) / w, ((c - 1) * u0[0] + s * u0[1]) / w], -1)
    return x, u


# --- right-hand side ---------------------------------------------------------------

def test_rhs_uncharged_reduces_to_geodesic():
    model = hopf.HopfBundle("complex").as_local_model("north")
    x, u = np.array([0.3, -0.4]), np.array([1.0, 0.5])
    dx, du, dv = wong_rhs(model, WongState(0, x, u, [0.0]))
    gamma = local_data(model, x).gamma
    np.testing.assert_allclose(du, -np.einsum("rmn,m,n->r", gamma, u, u), atol=1e-14)
    assert dv == pytest.approx([0.0])


def test_rhs_larmor_system():
    B, k = 2.0, -0.5
    u = np.array([0.3, 1.1])
    _, du, dv = wong_rhs(models.larmor(B), WongState(0, [1.0, 2.0], u, [k]))
    np.testing.assert_allclose(du, k * B * np.array([u[1], -u[0]]), atol=1e-15)
    assert not np.any(dv)


def test_rhs_bi_invariant_frame_velocity_is_constant_when_potential_vanishes_along_u():
    # ad-invariant constant beta: the L term drops and -beta(v, [A(u), .]) is the only vertical term
    model = models.su2_bi_invariant(3)
    x = np.zeros(3)
    _, _, dv = wong_rhs(model, WongState(0, x, [1.0, 0.2, 0.3], [0.4, -1.0, 0.7]))
    assert np.abs(dv).max() < 1e-15


def test_batched_and_point_rhs_agree():
    rng = np.random.default_rng(0)
    for model in (random_su2_model(rng), models.warped_abelian(2, [[0, 1.0], [-1.0, 0]], [0.3, -0.2]),
                  hopf.HopfBundle("quaternionic").as_local_model("south")):
        system = WongSystem(model)
        y = rng.normal(size=(5, 2 * model.m + model.d + model.d ** 2)) * 0.5
        batched = system(0.0, y)
        single = np.array([system(0.0, row) for row in y])
        np.testing.assert_allclose(batched, single, atol=1e-12)


def test_rhs_matches_adapted_frame_geodesic_acceleration():
    from kkgeom.geometry import frame_connection, geodesic_acceleration
    rng = np.random.default_rng(1)
    model = random_su2_model(rng)
    for _ in range(5):
        x, u, v = rng.normal(size=(3, 3)) * 0.5
        w = np.concatenate([u, v])
        acc = geodesic_acceleration(frame_connection(model, x).coefficients, w)
        _, du, dv = wong_rhs(model, WongState(0, x, u, v))
        np.testing.assert_allclose(np.concatenate([du, dv]), acc, atol=1e-10)


# --- integration --------------------------------------------------------------------

def test_straight_line_when_field_vanishes():
    traj = integrate(models.larmor(0.0), WongState(0, [1.0, -1.0], [1.0, 0.0], [3.0]), 2.0, h=0.1)
    np.testing.assert_allclose(traj.x[-1], [3.0, -1.0], atol=1e-13)
    assert traj.t[-1] == 2.0
    assert np.all(np.diff(traj.t) > 0)


def test_larmor_against_closed_form():
    B, k, u0 = 1.5, 0.8, np.array([0.6, -0.2])
    traj = integrate(models.larmor(B), WongState(0, [0, 0], u0, [k]), 3.0, h=1e-3)
    x, u = larmor_circle(B, k, u0, traj.t)
    assert np.abs(traj.x - x).max() < 1e-11
    assert np.abs(traj.u - u).max() < 1e-11


def test_rk4_order_on_larmor():
    B, k, u0 = 1.0, 1.0, np.array([1.0, 0.0])
    errs = []
    for h in (1e-2, 5e-3, 2.5e-3):
        traj = integrate(models.larmor(B), WongState(0, [0, 0], u0, [k]), 2 * np.pi, h=h)
        x, _ = larmor_circle(B, k, u0, traj.t[-1])
        errs.append(np.linalg.norm(traj.x[-1] - x))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 3.8


def test_time_reversal_returns_to_start():
    model = random_su2_model(np.random.default_rng(2))
    s0 = WongState(0, [0.1, 0.2, -0.1], [0.5, -0.3, 0.2], [0.4, 0.1, -0.6])
    fwd = integrate(model, s0, 3.0, h=1e-3)
    back = integrate(model, fwd.final.reversed(), 6.0, h=1e-3)
    assert np.abs(back.x[-1] - s0.x).max() < 1e-7
    assert np.abs(back.u[-1] + s0.u).max() < 1e-7


def test_rk45_agrees_with_rk4():
    model = models.su2_bi_invariant(3)
    s0 = WongState(0, [0, 0, 0], [1.0, 0.0, 0.5], [0.3, 0.2, 0.1])
    a = integrate(model, s0, 5.0, h=1e-3)
    b = integrate(model, s0, 5.0, method="rk45", atol=1e-11, rtol=1e-11)
    assert np.abs(a.x[-1] - b.x[-1]).max() < 1e-8
    assert b.meta["nfev"] > 0


def test_degenerate_start_stays_constant():
    traj = integrate(models.su2_bi_invariant(3), WongState(0, [1, 2, 3], [0, 0, 0], [0, 0, 0]), 1.0, h=0.1)
    assert np.all(traj.x == traj.x[0])


def test_integration_input_errors():
    model = models.larmor()
    with pytest.raises(InputError):
        integrate(model, WongState(1.0, [0, 0], [1, 0], [1]), 0.5)
    with pytest.raises(InputError):
        integrate(model, WongState(0, [0, 0], [1, 0], [1]), 1.0, h=-1e-3)
    with pytest.raises(InputError):
        integrate(model, WongState(0, [0, 0, 0], [1, 0, 0], [1]), 1.0)
    with pytest.raises(InputError):
        integrate(model, WongState(0, [0, 0], [1, 0], [1]), 1.0, method="euler")


def test_integration_error_carries_point():
    # the chart blows up at the excluded pole: a radial trajectory runs into it
    model = hopf.HopfBundle("complex").as_local_model("north")
    with pytest.raises(IntegrationError) as info:
        integrate(model, WongState(0, [0.5, 0], [40.0, 0], [0.0]), 10.0, h=1e-2)
    assert "chart" in str(info.value)


def test_s2_monopole_matches_projected_great_circle():
    bundle = hopf.HopfBundle("complex")
    rng = np.random.default_rng(3)
    p0 = rng.normal(size=4)
    p0 /= np.linalg.norm(p0)
    w = rng.normal(size=4)
    w -= (w @ p0) * p0
    w /= np.linalg.norm(w)
    chart = hopf._best_chart(bundle.project(p0))
    x, u, v, _ = bundle.descend(p0, w, chart)
    traj = integrate(bundle.as_local_model(chart), WongState(0, x, u, v), 0.5, h=1e-3)
    ref = bundle.project(hopf.great_circle(p0, w, traj.t))
    got = bundle.from_chart(traj.x, chart)
    assert np.abs(got - ref).max() < 1e-9


# --- the B-term sign against geodesics of the full metric ------------------------------

def test_vertical_equation_against_coordinate_geodesics():
    # warped abelian model: B != 0, metric in coordinates (x, theta) independent of theta
    model = models.warped_abelian(2, [[0, 1.2], [-1.2, 0]], [0.4, -0.3])
    x0, u0, v0 = np.array([0.1, -0.2]), np.array([0.7, 0.3]), np.array([0.9])
    theta_dot = v0 - model.gauge(x0) @ u0

    def metric(q):
        return kk_metric_components(model, q[:2])

    ref = coordinate_geodesic(metric, np.r_[x0, 0.0], np.r_[u0, theta_dot], 2.0, 1e-3)
    geo = integrate(model, WongState(0, x0, u0, v0), 2.0, h=1e-3)
    shown = integrate(model, WongState(0, x0, u0, v0), 2.0, h=1e-3, vertical_form="as_displayed")
    assert np.abs(geo.x - ref[:, :2]).max() < 1e-7
    assert np.abs(shown.x - ref[:, :2]).max() > 1e-3


# --- monitors ------------------------------------------------------------------------

def test_conserved_energy_examples():
    model = models.larmor()
    assert conserved_energy(model, WongState(0, [0, 0], [0, 0], [0])) == 0
    assert conserved_energy(model, WongState(0, [0, 0], [0.6, 0.8], [0])) == pytest.approx(1.0)


def test_energy_and_charge_drift_short_runs():
    model = models.su2_bi_invariant(3)
    traj = integrate(model, WongState(0, [0, 0, 0], [1.0, 0.0, 0.5], [0.3, 0.2, 0.1]), 5.0, h=1e-3)
    assert energy_drift(model, traj) < 1e-10
    assert charges(model, traj).drift < 1e-10
    lar = models.larmor(2.0)
    traj = integrate(lar, WongState(0, [0, 0], [1.0, 0.0], [0.5]), 5.0, h=1e-3)
    assert charges(lar, traj).drift < 1e-10


def test_frame_charge_drifts_for_non_invariant_fiber():
    # beta depends on x: -beta v drifts and is only reported, the transported Noether charge stays
    model = random_su2_model(np.random.default_rng(4))
    traj = integrate(model, WongState(0, [0, 0, 0], [1.0, 0.3, -0.2], [0.8, 0.1, 0.4]), 3.0, h=1e-3)
    ch = charges(model, traj)
    assert ch.frame_drift > 1e-3
    assert ch.drift < 1e-9
    assert energy_drift(model, traj) < 1e-10


def test_abelian_warped_fiber_keeps_charge():
    model = models.warped_abelian(2, [[0, 1.0], [-1.0, 0]], [0.5, 0.0])
    traj = integrate(model, WongState(0, [0, 0], [1.0, 0.3], [0.8]), 3.0, h=1e-3)
    assert charges(model, traj).frame_drift < 1e-10


def test_projected_curvature_examples():
    lar = models.larmor(1.5)
    traj = integrate(lar, WongState(0, [0, 0], [0.0, 2.0], [0.8]), 3.0, h=1e-3)
    kg = projected_curvature(lar, traj)
    # kappa = -beta v = -0.8, curvature kappa B / |u|
    assert np.abs(kg - (-0.8) * 1.5 / 2.0).max() < 1e-7
    flat = integrate(lar, WongState(0, [0, 0], [0.0, 2.0], [0.0]), 1.0, h=1e-2)
    assert np.abs(projected_curvature(lar, flat)).max() < 1e-7
    with pytest.raises(InputError):
        bi = models.su2_bi_invariant(3)
        projected_curvature(bi, integrate(bi, WongState(0, [0, 0, 0], [1, 0, 0], [0, 0, 0]), 0.1, h=0.05))


@pytest.mark.parametrize("charge", [0.5, -1.0, 2.0])
def test_monopole_curvature_constant(charge):
    model = hopf.HopfBundle("complex").as_local_model("north")
    traj = integrate(model, WongState(0, [0.2, 0.1], [0.5, -0.3], [charge]), 3.0, h=1e-3)
    kg = projected_curvature(model, traj)
    assert np.ptp(kg) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-2.0, 2.0), st.floats(0.3, 2.0))
def test_larmor_radius_property(B, k, speed):
    if abs(k) < 0.1:
        k = 0.1
    traj = integrate(models.larmor(B), WongState(0, [0, 0], [speed, 0], [k]), 1.0, h=1e-2)
    # circle centre (0, -speed / (k B)) and radius speed / |k B|
    r = np.linalg.norm(traj.x - np.array([0.0, -speed / (k * B)]), axis=1)
    assert np.abs(r - speed / abs(k * B)).max() < 1e-6 * max(1.0, speed / abs(k * B))


def test_trajectory_csv_layout():
    model = models.su2_bi_invariant(3)
    traj = integrate(model, WongState(0, [0, 0, 0], [1, 0, 0], [0.1, 0.2, 0.3]), 0.2, h=0.1)
    text = trajectory_csv(model, traj)
    lines = text.splitlines()
    assert lines[0] == ",".join(trajectory_header(3, 3))
    assert lines[0] == "t,x1,x2,x3,u1,u2,u3,v1,v2,v3,energy,k1,k2,k3"
    assert len(lines) == 1 + len(traj)
    assert all(len(row.split(",")) == 14 for row in lines[1:])
