"""Generalized Wong equations for curves in a local Kaluza-Klein model.

The state is (x, u, v): base point, base velocity and vertical frame
velocity ``v^a = A^a_mu u^mu + theta^a(gamma')``.  The equations are the
geodesic equations of the Kaluza-Klein metric written in the adapted
frame, ``w' = -G^K_{LM} w^L w^M`` with ``w = (u, v)`` and ``x' = u``:

    u'^rho = -Gbar^rho_{mu nu} u^mu u^nu + ginv^{alpha rho} beta_bc F^c_{alpha mu} u^mu v^b
             + 1/2 ginv^{mu rho} B_{a mu b} v^a v^b
    v'^b   = -1/2 beta^{db} L_{acd} v^a v^c - beta^{db} (d_mu beta_ad - beta(xi_a, [A_mu, xi_d])) v^a u^mu

Alongside the state we transport R in GL(d), ``R' = ad(v - A(u)) R`` with
R(0) = 1; it converts the frame velocity into the conserved Noether
charge ``kappa = -R^T beta v`` of the right action.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import DomainError, InputError, NumericError
from .geometry import (KKLocalModel, _b_from, _bracket_part, _christoffel_from,
                       _field_strength_from, _l_from, local_data)

VERTICAL_FORMS = ("geodesic", "as_displayed")


class IntegrationError(NumericError):
    """Integration failed; ``partial`` holds the trajectory up to the failure."""

    def __init__(self, message: str, partial: "Optional[Trajectory]" = None, point=None):
        super().__init__(message, point=point)
        self.partial = partial


@dataclass
class WongState:
    t: float
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.t = float(self.t)
        self.x = np.array(self.x, dtype=float)
        self.u = np.array(self.u, dtype=float)
        self.v = np.array(self.v, dtype=float)
        if self.x.shape != self.u.shape:
            raise InputError("x and u must have the same length")

    def reversed(self) -> "WongState":
        return WongState(self.t, self.x, -self.u, -self.v)


# ---------------------------------------------------------------------------
# right-hand side

class WongSystem:
    """Right-hand side of the Wong system for one model.

    Quantities that do not depend on the point (a constant base metric, a
    constant fiber metric with its inverse and L tensor) are evaluated once
    here.  ``vertical_form`` selects the geodesic form (default) or the
    form with the single B-term ``-1/2 beta^{db} B_{a nu d} v^a u^nu`` in
    the vertical equation.
    """

    def __init__(self, model: KKLocalModel, vertical_form: str = "geodesic"):
        if vertical_form not in VERTICAL_FORMS:
            raise InputError(f"vertical_form must be one of {VERTICAL_FORMS}")
        self.model = model
        self.vertical_form = vertical_form
        self.m, self.d = model.m, model.d
        self._sc = model.algebra
        self._c = model.algebra.c
        self._abelian = model.algebra.is_abelian
        x0 = np.zeros(self.m) if model.sample_point is None else np.asarray(model.sample_point, float)
        self._ginv = None
        if model.base.is_constant:
            self._ginv = np.linalg.inv(model.base.g(x0))
        self._conformal = model.base.conformal_factor
        self._fiber = None
        if model.fiber.is_constant:
            beta = np.array(model.beta(x0))
            self._fiber = (beta, np.linalg.inv(beta), _l_from(self._sc, beta))
        eye = np.eye(self.m)
        self._ginv_identity = self._ginv is not None and np.array_equal(self._ginv, eye)
        self._beta_identity = self._fiber is not None and np.array_equal(self._fiber[0], np.eye(self.d))
        d = self.d
        # ad(z) = (z @ self._ad).reshape(d, d)
        self._ad = np.ascontiguousarray(self._c.transpose(1, 0, 2)).reshape(d, d * d)

    def split(self, y: np.ndarray):
        m, d = self.m, self.d
        return y[..., :m], y[..., m:2 * m], y[..., 2 * m:2 * m + d]

    def _evaluate(self, x, u, v):
        model = self.model
        A = model.gauge(x)
        F = _field_strength_from(self._sc, A, model.gauge.d(x))
        if self._ginv is None:
            g = model.base.g(x)
            ginv = np.linalg.inv(g)
            gamma = _christoffel_from(g, ginv, model.base.dg(x))
            du = -np.einsum("...rmn,...m,...n->...r", gamma, u, u)
        else:
            ginv = self._ginv
            du = 0.0
        if self._fiber is None:
            beta = model.beta(x)
            binv = np.linalg.inv(beta)
            L = _l_from(self._sc, beta)
            dbeta = model.dbeta(x)
        else:
            beta, binv, L = self._fiber
            dbeta = None
        # Lorentz term ginv^{alpha rho} beta_bc F^c_{alpha mu} u^mu v^b
        Fu = np.einsum("...csm,...m->...cs", F, u)
        bv = np.einsum("...bc,...b->...c", beta, v)
        du = du + np.einsum("...sr,...cs,...c->...r", ginv, Fu, bv)
        Au = np.einsum("...am,...m->...a", A, u)
        if dbeta is not None or not self._abelian:
            if dbeta is None:
                B = -_bracket_part(self._c, A, beta)
            else:
                B = _b_from(self._sc, beta, dbeta, A)
            du = du + 0.5 * np.einsum("...mr,...amb,...a,...b->...r", ginv, B, v, v)
        if self._abelian:
            vv = 0.0
        else:
            vv = -0.5 * np.einsum("...acd,...a,...c->...d", L, v, v)
        if self.vertical_form == "geodesic":
            # -(X - Z) v u with X = d beta, Z_{a mu d} = beta(xi_a, [A_mu, xi_d])
            vu = 0.0
            if dbeta is not None:
                vu = -np.einsum("...mad,...a,...m->...d", dbeta, v, u)
            if not self._abelian:
                vu = vu + np.einsum("...e,ebd,...b->...d", bv, self._c, Au)
        else:
            vu = 0.0
            if dbeta is not None or not self._abelian:
                vu = -0.5 * np.einsum("...amd,...a,...m->...d", B, v, u)
        rhs_v = vv + vu
        if np.ndim(rhs_v) == 0:
            dv = np.zeros(np.shape(v))
        else:
            dv = np.einsum("...db,...d->...b", binv, rhs_v)
        return du, dv, Au

    def accelerations(self, x: np.ndarray, u: np.ndarray, v: np.ndarray):
        """(du/dt, dv/dt) at a batch of states."""
        x, u, v = (np.asarray(a, dtype=float) for a in (x, u, v))
        du, dv, _ = self._evaluate(x, u, v)
        return np.broadcast_to(du, u.shape).copy(), dv

    def _point_rhs(self, y: np.ndarray) -> np.ndarray:
        """Single-state right-hand side written with ad-matrices and matmul.

        Same equations as ``_evaluate``, arranged for small arrays: the
        quadratic contractions with v are taken in closed form, e.g.
        L_{acd} v^a v^c = 2 beta(v, [v, xi_d]), and the geodesic form only
        needs the single matrix N = ad(v - A(u)).
        """
        m, d = self.m, self.d
        model = self.model
        x, u, v = y[:m], y[m:2 * m], y[2 * m:2 * m + d]
        A = model.gauge(x)
        dA = model.gauge.d(x)
        Au = A @ u
        # kept for callers that also track the fiber coordinate (g' = (v - A(u)) g)
        self.last_potential_speed = Au
        # F^c_{s mu} u^mu = (d_s A^c) u - (d_u A^c)_s + [A_s, A(u)]^c
        Fu = (dA @ u).T - (u @ dA.reshape(m, d * m)).reshape(d, m)
        if self._fiber is None:
            beta = model.beta(x)
            binv = np.linalg.inv(beta)
            dbeta = model.dbeta(x)
            bv = beta @ v
        else:
            beta, binv, _ = self._fiber
            dbeta = None
            bv = v if self._beta_identity else beta @ v
        N = None
        if self._abelian:
            # force includes the 1/2 B v v term of the lowered acceleration
            force = bv @ Fu
            rhs_v = np.zeros(d)
        elif self.vertical_form == "geodesic":
            N = ((v - Au) @ self._ad).reshape(d, d)
            # bracket part of F plus B v v / 2 = 2 beta([A_mu, v], v) / 2
            force = bv @ (Fu + N @ A)
            rhs_v = -(bv @ N)
        else:
            ad_au = (Au @ self._ad).reshape(d, d)
            ad_v = (v @ self._ad).reshape(d, d)
            force = bv @ (Fu + (ad_v - ad_au) @ A)
            # -1/2 B v u, bracket part +1/2 (Y + Z) v u
            rhs_v = -(bv @ ad_v) + 0.5 * (bv @ ad_au + beta @ (ad_au @ v))
        if dbeta is not None:
            dbv = dbeta @ v
            force = force + 0.5 * (dbv @ v)
            # d_u beta applied to v, X v u
            xvu = u @ dbv
            rhs_v = rhs_v - (xvu if self.vertical_form == "geodesic" else 0.5 * xvu)
        if self._ginv is None and self._conformal is not None:
            lam, grad = self._conformal
            gl = grad(x)
            du = (force - (gl @ u) * u + 0.5 * (u @ u) * gl) / lam(x)
        elif self._ginv is None:
            g = model.base.g(x)
            dgu = model.base.dg(x) @ u
            du = np.linalg.solve(g, force - u @ dgu + 0.5 * (dgu @ u))
        elif self._ginv_identity:
            du = force
        else:
            du = self._ginv @ force
        dv = rhs_v if self._beta_identity else binv @ rhs_v
        if y.shape[0] > 2 * m + d:
            R = y[2 * m + d:].reshape(d, d)
            if self._abelian:
                tail = np.zeros(d * d)
            else:
                if N is None:
                    N = ((v - Au) @ self._ad).reshape(d, d)
                tail = (N @ R).ravel()
            res = np.concatenate([u, du, dv, tail])
        else:
            res = np.concatenate([u, du, dv])
        # a sum of finite entries is finite short of overflow, which is a failure anyway
        if not math.isfinite(res.sum()):
            raise NumericError("non-finite Wong right-hand side", point=x.tolist())
        return res

    def __call__(self, t: float, y: np.ndarray) -> np.ndarray:
        if y.ndim == 1:
            return self._point_rhs(y)
        m, d = self.m, self.d
        x, u, v = self.split(y)
        du, dv, Au = self._evaluate(x, u, v)
        du = np.broadcast_to(du, u.shape)
        out = [u, du, dv]
        if y.shape[-1] > 2 * m + d:
            if self._abelian:
                out.append(np.zeros(y.shape[:-1] + (d * d,)))
            else:
                R = y[..., 2 * m + d:].reshape(y.shape[:-1] + (d, d))
                adz = np.einsum("cab,...a->...cb", self._c, v - Au)
                out.append((adz @ R).reshape(y.shape[:-1] + (d * d,)))
        res = np.concatenate(out, axis=-1)
        if not np.isfinite(res).all():
            raise NumericError("non-finite Wong right-hand side", point=np.asarray(x).tolist())
        return res


def wong_rhs(model: KKLocalModel, state: WongState, vertical_form: str = "geodesic"):
    """(dx/dt, du/dt, dv/dt) at a state."""
    du, dv = WongSystem(model, vertical_form).accelerations(state.x, state.u, state.v)
    return state.u.copy(), du, dv


# ---------------------------------------------------------------------------
# trajectories and integrators

@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    R: np.ndarray
    method: str
    step: Optional[float] = None
    atol: Optional[float] = None
    rtol: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def state(self, i: int) -> WongState:
        return WongState(self.t[i], self.x[i], self.u[i], self.v[i])

    @property
    def final(self) -> WongState:
        return self.state(-1)


def _pack(state: WongState) -> np.ndarray:
    d = state.v.shape[-1]
    return np.concatenate([state.x, state.u, state.v, np.eye(d).ravel()])


def _unpack(ts, ys, m, d, **kw) -> Trajectory:
    ys = np.asarray(ys)
    return Trajectory(
        t=np.asarray(ts, dtype=float),
        x=ys[:, :m].copy(),
        u=ys[:, m:2 * m].copy(),
        v=ys[:, 2 * m:2 * m + d].copy(),
        R=ys[:, 2 * m + d:].reshape(-1, d, d).copy(),
        **kw,
    )


def rk4(f: Callable[[float, np.ndarray], np.ndarray], t0: float, y0: np.ndarray,
        t_end: float, h: float, record_every: int = 1,
        callback: Optional[Callable[[float, np.ndarray], np.ndarray]] = None):
    """Classical fixed-step Runge-Kutta; the last step is shortened to land on t_end.

    ``callback(t, y)`` may replace the state after each step (chart swaps).
    Returns lists (ts, ys) of recorded samples; the endpoints are always kept.
    """
    n_steps = max(1, int(math.ceil((t_end - t0) / h - 1e-9)))
    ts, ys = [t0], [np.array(y0, dtype=float)]
    y = ys[0]
    t = t0
    for i in range(n_steps):
        hi = h if i < n_steps - 1 else (t_end - t)
        k1 = f(t, y)
        k2 = f(t + 0.5 * hi, y + (0.5 * hi) * k1)
        k3 = f(t + 0.5 * hi, y + (0.5 * hi) * k2)
        k4 = f(t + hi, y + hi * k3)
        y = y + (hi / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = t0 + (i + 1) * h if i < n_steps - 1 else t_end
        if callback is not None:
            y = callback(t, y)
        if (i + 1) % record_every == 0 or i == n_steps - 1:
            ts.append(t)
            ys.append(y)
    return ts, ys


def integrate(
    model: KKLocalModel,
    state0: WongState,
    t_end: float,
    method: str = "rk4",
    h: float = 1e-3,
    atol: float = 1e-10,
    rtol: float = 1e-10,
    record_every: int = 1,
    vertical_form: str = "geodesic",
) -> Trajectory:
    """Integrate the Wong system from state0 to t_end.

    ``rk4`` uses the fixed step h; ``rk45`` is scipy's adaptive
    Dormand-Prince pair with the given tolerances.
    """
    if not t_end > state0.t:
        raise InputError("t_end must exceed the initial time")
    m, d = model.m, model.d
    if state0.x.shape != (m,) or state0.v.shape != (d,):
        raise InputError(f"state dimensions do not match model (m={m}, d={d})")
    system = WongSystem(model, vertical_form)
    y0 = _pack(state0)
    if method == "rk4":
        if not h > 0:
            raise InputError("step h must be positive")
        try:
            ts, ys = rk4(system, state0.t, y0, t_end, h, record_every)
        except NumericError as exc:
            raise IntegrationError(str(exc), point=exc.point) from exc
        except DomainError as exc:
            raise IntegrationError(f"left the chart domain: {exc}") from exc
        return _unpack(ts, ys, m, d, method="rk4", step=h,
                       meta={"vertical_form": vertical_form})
    if method == "rk45":
        if not (atol > 0 and rtol > 0):
            raise InputError("tolerances must be positive")
        from scipy.integrate import solve_ivp

        sol = solve_ivp(system, (state0.t, t_end), y0, method="RK45", atol=atol, rtol=rtol)
        traj = _unpack(sol.t, sol.y.T, m, d, method="rk45", atol=atol, rtol=rtol,
                       meta={"vertical_form": vertical_form, "nfev": int(sol.nfev)})
        if sol.status != 0:
            raise IntegrationError(f"adaptive integration failed: {sol.message}", partial=traj)
        return traj
    raise InputError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# monitors

def conserved_energy(model: KKLocalModel, state) -> np.ndarray:
    """gbar(u, u) + beta(v, v); accepts a WongState or a Trajectory."""
    g = model.base.g(state.x)
    beta = model.beta(state.x)
    return (np.einsum("...mn,...m,...n->...", g, state.u, state.u)
            + np.einsum("...ab,...a,...b->...", beta, state.v, state.v))


def energy_drift(model: KKLocalModel, traj: Trajectory) -> float:
    e = conserved_energy(model, traj)
    scale = abs(e[0]) if e[0] != 0 else 1.0
    return float(np.max(np.abs(e - e[0])) / scale)


@dataclass
class Charges:
    kappa: np.ndarray        # Noether charges -R^T beta v, (N, d)
    drift: float
    frame_charge: np.ndarray  # -beta v, (N, d)
    frame_drift: float


def charges(model: KKLocalModel, traj: Trajectory) -> Charges:
    beta = model.beta(traj.x)
    bv = np.einsum("...ab,...b->...a", beta, traj.v)
    kappa = -np.einsum("...ba,...b->...a", traj.R, bv)
    frame = -bv
    return Charges(
        kappa=kappa,
        drift=float(np.max(np.abs(kappa - kappa[0]))),
        frame_charge=frame,
        frame_drift=float(np.max(np.abs(frame - frame[0]))),
    )


def projected_curvature(model: KKLocalModel, traj: Trajectory,
                        vertical_form: str = "geodesic") -> np.ndarray:
    """Signed geodesic curvature of the base curve (surface bases only).

    kappa_g = gbar(a, J u) / |u|^3 with a the covariant acceleration and J
    the positive rotation of the oriented chart.
    """
    if model.m != 2:
        raise InputError("projected curvature needs a two-dimensional base")
    system = WongSystem(model, vertical_form)
    du, _ = system.accelerations(traj.x, traj.u, traj.v)
    gamma = local_data(model, traj.x).gamma
    acc = du + np.einsum("...rmn,...m,...n->...r", gamma, traj.u, traj.u)
    g = model.base.g(traj.x)
    speed = np.sqrt(np.einsum("...mn,...m,...n->...", g, traj.u, traj.u))
    eps_u = np.stack([-traj.u[..., 1], traj.u[..., 0]], axis=-1)
    signed = np.sqrt(np.linalg.det(g)) * np.einsum("...r,...r->...", acc, eps_u)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(speed > 0, signed / speed ** 3, 0.0)


# ---------------------------------------------------------------------------
# export

def trajectory_rows(model: KKLocalModel, traj: Trajectory):
    e = conserved_energy(model, traj)
    k = charges(model, traj).kappa
    for i in range(len(traj)):
        yield [traj.t[i], *traj.x[i], *traj.u[i], *traj.v[i], e[i], *k[i]]


def trajectory_header(m: int, d: int) -> list[str]:
    return (["t"] + [f"x{i + 1}" for i in range(m)] + [f"u{i + 1}" for i in range(m)]
            + [f"v{i + 1}" for i in range(d)] + ["energy"] + [f"k{i + 1}" for i in range(d)])


def format_float(value: float) -> str:
    return format(float(value), ".17g")


def trajectory_csv(model: KKLocalModel, traj: Trajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(trajectory_header(model.m, model.d))
    for row in trajectory_rows(model, traj):
        writer.writerow([format_float(c) for c in row])
    return buf.getvalue()
