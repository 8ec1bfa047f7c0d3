"""Complex and quaternionic Hopf bundles as Kaluza-Klein geometries.

S^3 -> S^2 with fiber U(1) and S^7 -> S^4 with fiber SU(2), both with the
round metric on the total space.  Points of S^3 are unit quaternions (4
coefficients); points of S^7 are pairs of quaternions (8 coefficients),
i.e. octonions q1 + q2 l.  The structure group acts by right quaternion
multiplication, so the fundamental fields are D_a(p) = p xi_a with
xi = (i,) or (i, j, k).

Projections land on unit spheres written as P = (t, w):

    S^3: q i q*  -> (t, w) in R x R^2   (the i, j, k coefficients)
    S^7: (q1, q2) -> (|q1|^2 - |q2|^2, 2 q1 q2*)

Both bases carry stereographic charts x = w / (1 - t) ("north", missing
t = 1) and x = w / (1 + t) ("south", missing t = -1), related by
x -> x / |x|^2.  The quotient metric in either chart is
delta / (1 + |x|^2)^2 (a sphere of radius 1/2).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import DomainError, InputError
from .geometry import BaseChart, GaugePotential, KKLocalModel
from .liealg import AlgebraMetric, abelian, qconj, qmul, su2
from .tension import MapJet, BundleJet, DomainGrid, lorentz_charge_density
from .wong import IntegrationError, WongSystem

KINDS = ("complex", "quaternionic")
CHARTS = ("north", "south")
UNIT_TOL = 1e-9
TANGENT_TOL = 1e-10
# points with |x|^2 beyond this are treated as the excluded pole
CHART_RADIUS2 = 1e12

_XI = np.eye(4)[1:]


def _quat_pairs(p: np.ndarray) -> np.ndarray:
    """View (..., 4k) as (..., k, 4)."""
    return p.reshape(p.shape[:-1] + (-1, 4))


def _rmul(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Componentwise right multiplication of a quaternion tuple by q."""
    pq = _quat_pairs(np.asarray(p, dtype=float))
    out = qmul(pq, np.asarray(q, dtype=float)[..., None, :])
    return out.reshape(out.shape[:-2] + (-1,))


def _conj_dot(s: np.ndarray, p: np.ndarray) -> np.ndarray:
    """sum_k conj(s_k) p_k, the quaternion g with p = s g when |s| = 1 and p in s H."""
    return np.sum(qmul(qconj(_quat_pairs(s)), _quat_pairs(p)), axis=-2)


def _inner(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.einsum("...k,...k->...", X, Y)


def adjoint_matrix(g: ArrayLike) -> np.ndarray:
    """Ad_g on imaginary quaternions in the basis (i, j, k), for unit g."""
    g = np.asarray(g, dtype=float)
    rot = qmul(qmul(g[..., None, :], _XI), qconj(g)[..., None, :])   # [..., b, :] = g xi_b g*
    return np.swapaxes(rot[..., 1:], -1, -2)


# ---------------------------------------------------------------------------
# section data: s(x) = (c0 + C x) / sqrt(1 + |x|^2)

def _section_data(kind: str, chart: str):
    if kind == "complex":
        if chart == "north":   # (-x2 + x1 i + j)
            c0 = np.array([0.0, 0, 1, 0])
            C = np.array([[0.0, -1], [1, 0], [0, 0], [0, 0]])
        else:                  # (1 - x2 j + x1 k)
            c0 = np.array([1.0, 0, 0, 0])
            C = np.array([[0.0, 0], [0, 0], [0, -1], [1, 0]])
    else:
        c0 = np.zeros(8)
        C = np.zeros((8, 4))
        if chart == "north":   # (y, 1)
            c0[4] = 1.0
            C[:4] = np.eye(4)
        else:                  # (1, y*)
            c0[0] = 1.0
            C[4:] = np.diag([1.0, -1, -1, -1])
    return c0, C


@dataclass(frozen=True)
class HopfBundle:
    """Hopf fibration of kind ``complex`` (S^3) or ``quaternionic`` (S^7)."""

    kind: str = "complex"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"bundle kind must be one of {KINDS}")

    @property
    def ambient_dim(self) -> int:
        return 4 if self.kind == "complex" else 8

    @property
    def m(self) -> int:
        return 2 if self.kind == "complex" else 4

    @property
    def d(self) -> int:
        return 1 if self.kind == "complex" else 3

    @property
    def xi(self) -> np.ndarray:
        """Lie algebra basis as imaginary quaternions, (d, 4)."""
        return _XI[: self.d]

    @property
    def algebra(self):
        return abelian(1) if self.kind == "complex" else su2()

    # -- points and frames ---------------------------------------------------

    def check_point(self, p: ArrayLike, tol: float = UNIT_TOL) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if p.shape[-1] != self.ambient_dim:
            raise InputError(f"points must have {self.ambient_dim} coefficients")
        if not np.all(np.isfinite(p)):
            raise InputError("non-finite point")
        err = np.max(np.abs(np.linalg.norm(p, axis=-1) - 1.0), initial=0.0)
        if err > tol:
            raise InputError(f"point is off the unit sphere by {err:.2e}")
        return p

    def check_tangent(self, p: np.ndarray, X: ArrayLike, tol: float = TANGENT_TOL) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.ambient_dim:
            raise InputError(f"vectors must have {self.ambient_dim} coefficients")
        off = np.max(np.abs(_inner(X, p)), initial=0.0)
        if off > tol:
            raise InputError(f"vector is not tangent to the sphere (<X, p> = {off:.2e})")
        return X

    def vertical_frame(self, p: ArrayLike) -> np.ndarray:
        """D_a(p) = p xi_a, shape (..., d, N)."""
        p = np.asarray(p, dtype=float)
        return _rmul(p[..., None, :], self.xi)

    def _h(self, p: np.ndarray) -> np.ndarray:
        """Unit horizontal vector equal to p*l, taken on the patch where it is smooth."""
        q1, q2 = p[..., :4], p[..., 4:]
        n1 = np.linalg.norm(q1, axis=-1)[..., None]
        n2 = np.linalg.norm(q2, axis=-1)[..., None]
        e0 = np.zeros_like(q1)
        e0[..., 0] = 1.0
        with np.errstate(divide="ignore", invalid="ignore"):
            patch_a = np.concatenate([-n2 * e0, qmul(q2, qconj(q1)) / n2], axis=-1)
            patch_b = np.concatenate([-qmul(q1, qconj(q2)) / n1, n1 * e0], axis=-1)
        return np.where(n2 >= n1, patch_a, patch_b)

    def horizontal_frame(self, p: ArrayLike) -> np.ndarray:
        """Orthonormal horizontal frame, (..., m, N).

        S^3: (p j, p k).  S^7: (h, h i, h j, h k) with h = p*l on its patch.
        """
        p = np.asarray(p, dtype=float)
        if self.kind == "complex":
            return _rmul(p[..., None, :], _XI[1:])
        h = self._h(p)
        return _rmul(h[..., None, :], np.eye(4))

    def frame(self, p: ArrayLike) -> np.ndarray:
        """(D_1, ..., D_{N-1}): vertical fields first, then the horizontal ones."""
        return np.concatenate([self.vertical_frame(p), self.horizontal_frame(p)], axis=-2)

    def connection_form(self, p: ArrayLike, X: ArrayLike, check: bool = True) -> np.ndarray:
        """omega(X)^a = <X, p xi_a> for tangent vectors X at p."""
        p = np.asarray(p, dtype=float)
        if check:
            self.check_point(p)
            self.check_tangent(p, X)
        return np.einsum("...k,...ak->...a", np.asarray(X, dtype=float), self.vertical_frame(p))

    def vertical_part(self, p: np.ndarray, X: np.ndarray) -> np.ndarray:
        return np.einsum("...a,...ak->...k", self.connection_form(p, X, check=False),
                         self.vertical_frame(p))

    def horizontal_part(self, p: np.ndarray, X: np.ndarray) -> np.ndarray:
        return X - self.vertical_part(p, X)

    def _algebra_element(self, v: np.ndarray) -> np.ndarray:
        """Coefficients (..., d) -> imaginary quaternion (..., 4)."""
        return np.einsum("...a,ak->...k", v, self.xi)

    # -- projection ----------------------------------------------------------

    def project(self, p: ArrayLike) -> np.ndarray:
        """Point P = (t, w) on the unit base sphere."""
        p = self.check_point(p)
        if self.kind == "complex":
            return qmul(qmul(p, _XI[0]), qconj(p))[..., 1:]
        q1, q2 = p[..., :4], p[..., 4:]
        t = np.sum(q1 * q1, -1) - np.sum(q2 * q2, -1)
        return np.concatenate([t[..., None], 2.0 * qmul(q1, qconj(q2))], axis=-1)

    def project_derivative(self, p: np.ndarray, X: np.ndarray) -> np.ndarray:
        """d pi_p (X)."""
        if self.kind == "complex":
            i = _XI[0]
            return (qmul(qmul(X, i), qconj(p)) + qmul(qmul(p, i), qconj(X)))[..., 1:]
        q1, q2, X1, X2 = p[..., :4], p[..., 4:], X[..., :4], X[..., 4:]
        dt = 2.0 * (np.sum(q1 * X1, -1) - np.sum(q2 * X2, -1))
        dw = 2.0 * (qmul(X1, qconj(q2)) + qmul(q1, qconj(X2)))
        return np.concatenate([dt[..., None], dw], axis=-1)

    def _project_bilinear(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        """Q(a, b) with pi(p) = Q(p, p); used for exact second derivatives."""
        if self.kind == "complex":
            return qmul(qmul(a, _XI[0]), qconj(b))[..., 1:]
        t = np.sum(a[..., :4] * b[..., :4], -1) - np.sum(a[..., 4:] * b[..., 4:], -1)
        return np.concatenate([t[..., None], 2.0 * qmul(a[..., :4], qconj(b[..., 4:]))], axis=-1)

    # -- curvature and Lorentz endomorphism ----------------------------------

    def curvature(self, p: ArrayLike, X: ArrayLike, Y: ArrayLike, check: bool = True) -> np.ndarray:
        """Omega(X, Y) = -omega([X^H, Y^H]) = 2 <X^H xi_b, Y^H>.

        The bracket of horizontal extensions has vertical part
        <D_Y X - D_X Y, p xi_b>, and differentiating <Y, p xi_b> = 0 along X
        turns it into 2 <X xi_b, Y> independently of the extensions.
        """
        p = np.asarray(p, dtype=float)
        X = np.asarray(X, dtype=float)
        Y = np.asarray(Y, dtype=float)
        if check:
            self.check_point(p)
            self.check_tangent(p, X)
            self.check_tangent(p, Y)
        Xh = self.horizontal_part(p, X)
        Yh = self.horizontal_part(p, Y)
        return 2.0 * np.einsum("...ak,...k->...a", _rmul(Xh[..., None, :], self.xi), Yh)

    def curvature_frame(self, p: ArrayLike) -> np.ndarray:
        """Omega^b(D_r, D_s) on the horizontal frame, (..., d, m, m)."""
        p = self.check_point(p)
        H = self.horizontal_frame(p)
        Hxi = _rmul(H[..., :, None, :], self.xi)          # [..., r, b, :]
        return 2.0 * np.einsum("...rbk,...sk->...brs", Hxi, H)

    def lorentz_endomorphism(self, p: ArrayLike, V: ArrayLike, H: ArrayLike,
                             check: bool = True) -> np.ndarray:
        """<V, F> H, defined by <<V,F>H, H'> = beta(omega(V), Omega(H, H')).

        Equals 2 (H v)^H with v = omega(V) as an imaginary quaternion.
        """
        p = np.asarray(p, dtype=float)
        V = np.asarray(V, dtype=float)
        H = np.asarray(H, dtype=float)
        if check:
            self.check_point(p)
            self.check_tangent(p, V)
            self.check_tangent(p, H)
            hv = np.max(np.abs(self.horizontal_part(p, V)), initial=0.0)
            vh = np.max(np.abs(self.connection_form(p, H, check=False)), initial=0.0)
            if hv > TANGENT_TOL:
                raise InputError(f"first argument is not vertical (horizontal part {hv:.2e})")
            if vh > TANGENT_TOL:
                raise InputError(f"second argument is not horizontal (vertical part {vh:.2e})")
        v = self._algebra_element(self.connection_form(p, V, check=False))
        return self.horizontal_part(p, 2.0 * _rmul(H, v))

    # -- charts ---------------------------------------------------------------

    def to_chart(self, P: ArrayLike, chart: str) -> np.ndarray:
        """Stereographic coordinates of base points P = (t, w)."""
        sign = _chart_sign(chart)
        P = np.asarray(P, dtype=float)
        den = 1.0 - sign * P[..., 0]
        if np.any(den <= 1e-300):
            raise DomainError(f"point is the pole excluded by the {chart} chart")
        return P[..., 1:] / den[..., None]

    def from_chart(self, x: ArrayLike, chart: str) -> np.ndarray:
        sign = _chart_sign(chart)
        x = _check_chart_point(x)
        r2 = np.sum(x * x, -1)[..., None]
        return np.concatenate([sign * (r2 - 1.0) / (r2 + 1.0), 2.0 * x / (1.0 + r2)], axis=-1)

    def chart_derivative(self, P: np.ndarray, dP: np.ndarray, chart: str) -> np.ndarray:
        sign = _chart_sign(chart)
        den = (1.0 - sign * P[..., 0])[..., None]
        return dP[..., 1:] / den + sign * P[..., 1:] * dP[..., :1] / den ** 2

    def section(self, x: ArrayLike, chart: str) -> np.ndarray:
        """Local section s(x) with pi(s(x)) the chart point x."""
        c0, C = _section_data(self.kind, _chart_name(chart))
        x = _check_chart_point(x)
        rho = np.sqrt(1.0 + np.sum(x * x, -1))[..., None]
        return (c0 + np.einsum("km,...m->...k", C, x)) / rho

    def section_derivative(self, x: ArrayLike, u: ArrayLike, chart: str) -> np.ndarray:
        """ds_x(u)."""
        _, C = _section_data(self.kind, _chart_name(chart))
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        rho2 = (1.0 + np.sum(x * x, -1))[..., None]
        s = self.section(x, chart)
        return (np.einsum("km,...m->...k", C, u) / np.sqrt(rho2)
                - s * np.sum(x * u, -1)[..., None] / rho2)

    def fiber_coordinate(self, x: np.ndarray, p: np.ndarray, chart: str) -> np.ndarray:
        """g with p = s(x) g."""
        return _conj_dot(self.section(x, chart), p)

    def gauge_potential(self, chart: str) -> GaugePotential:
        """A = s^* omega in closed form, A^a_mu = (M[a,mu,nu] x^nu + m0[a,mu]) / (1 + |x|^2)."""
        c0, C = _section_data(self.kind, _chart_name(chart))
        Cxi = _rmul(C.T[:, None, :], self.xi)                     # [nu, a, k] = C_nu xi_a
        M = np.einsum("km,nak->amn", C, Cxi)
        m0 = np.einsum("km,ak->am", C, _rmul(c0, self.xi))
        d, m = self.d, self.m

        Mflat = M.reshape(d * m, m)
        Mt = np.ascontiguousarray(np.transpose(M, (2, 0, 1)))    # [lam, a, mu]

        def A(x):
            x = _check_chart_point(x)
            if x.ndim == 1:
                return ((Mflat @ x).reshape(d, m) + m0) * (1.0 / (1.0 + x @ x))
            r2 = 1.0 + np.sum(x * x, -1)[..., None, None]
            return (np.einsum("amn,...n->...am", M, x) + m0) / r2

        def dA(x):
            x = _check_chart_point(x)
            r2 = 1.0 + np.einsum("...k,...k->...", x, x) if x.ndim > 1 else 1.0 + x @ x
            if x.ndim == 1:
                a = ((Mflat @ x).reshape(d, m) + m0) / r2
                return (Mt - 2.0 * np.multiply.outer(x, a)) / r2
            a = (np.einsum("amn,...n->...am", M, x) + m0) / r2[..., None, None]
            out = Mt - 2.0 * np.einsum("...l,...am->...lam", x, a)
            return out / r2[..., None, None, None]

        return GaugePotential(A, dA)

    def base_chart(self) -> BaseChart:
        m = self.m

        def factor(x):
            x = _check_chart_point(x)
            if x.ndim == 1:
                return (1.0 + x @ x) ** -2
            return (1.0 + np.einsum("...k,...k->...", x, x)) ** -2

        def grad(x):
            x = _check_chart_point(x)
            if x.ndim == 1:
                return x * (-4.0 * (1.0 + x @ x) ** -3)
            return -4.0 * x * (1.0 + np.einsum("...k,...k->...", x, x))[..., None] ** -3

        return BaseChart.conformal(m, factor, grad, name=f"stereographic{m}")

    def as_local_model(self, chart: str) -> KKLocalModel:
        """Local Kaluza-Klein model over one stereographic chart."""
        chart = _chart_name(chart)
        fiber = AlgebraMetric.constant(np.eye(self.d))
        return KKLocalModel(self.base_chart(), self.gauge_potential(chart), fiber, self.algebra,
                            name=f"hopf-{self.kind}-{chart}")

    # -- states -----------------------------------------------------------------

    def lift(self, x: ArrayLike, u: ArrayLike, v: ArrayLike, chart: str, g: Optional[ArrayLike] = None):
        """Ambient (p, p') of the chart state (x, u, v) at fiber coordinate g (default 1).

        With p = s(x) g, the frame velocity is v = A(u) + g' g^{-1}, so
        p' = (ds(u) + s (v - A(u))) g.
        """
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        s = self.section(x, chart)
        A = self.gauge_potential(chart)(x)
        rel = self._algebra_element(v - np.einsum("...am,...m->...a", A, u))
        p = s
        pdot = self.section_derivative(x, u, chart) + _rmul(s, rel)
        if g is not None:
            g = np.asarray(g, dtype=float)
            p, pdot = _rmul(p, g), _rmul(pdot, g)
        return p, pdot

    def descend(self, p: ArrayLike, pdot: ArrayLike, chart: str):
        """Chart state (x, u, v, g) of an ambient point and velocity; v = Ad_g omega(p')."""
        p = self.check_point(p)
        pdot = self.check_tangent(p, pdot, tol=1e-9)
        P = self.project(p)
        x = self.to_chart(P, chart)
        u = self.chart_derivative(P, self.project_derivative(p, pdot), chart)
        g = self.fiber_coordinate(x, p, chart)
        om = self.connection_form(p, pdot, check=False)
        v = np.einsum("...ab,...b->...a", self.adjoint(g), om)
        return x, u, v, g

    def adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.kind == "complex":
            return np.ones(np.shape(g)[:-1] + (1, 1))
        return adjoint_matrix(g)

    def transition(self, x: np.ndarray, chart: str):
        """New chart name, point, Jacobian and transition element h = s'(x')^{-1} s(x)."""
        other = "south" if _chart_name(chart) == "north" else "north"
        r2 = float(x @ x)
        xn = x / r2
        jac = (np.eye(len(x)) - 2.0 * np.outer(x, x) / r2) / r2
        h = _conj_dot(self.section(xn, other), self.section(x, chart))
        return other, xn, jac, h


def _chart_name(chart: str) -> str:
    if chart not in CHARTS:
        raise InputError(f"chart must be one of {CHARTS}")
    return chart


def _chart_sign(chart: str) -> float:
    return 1.0 if _chart_name(chart) == "north" else -1.0


def _check_chart_point(x: ArrayLike) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        # single points dominate the integrator loop; skip the array reduction
        if not float(x @ x) <= CHART_RADIUS2:
            raise DomainError("chart point is non-finite or too close to the excluded pole")
        return x
    r2 = np.einsum("...k,...k->...", x, x)
    # the comparison is False for NaN, so non-finite input is caught as well
    if not np.all(r2 <= CHART_RADIUS2):
        raise DomainError("chart point is non-finite or too close to the excluded pole")
    return x


def _table(d: int, m: int, entries) -> np.ndarray:
    out = np.zeros((d, m, m))
    for a, r, s, value in entries:
        out[a, r, s] = value
        out[a, s, r] = -value
    return out


# Closed-form curvature tables Omega^b(D_r, D_s) on the horizontal frame
# (indices relative to the horizontal block), as used for reference checks:
#   complex:       -2 w2^w3 (x) i*
#   quaternionic:  2[(-w4^w5 + w6^w7) i* - (w4^w6 + w5^w7) j* + (-w4^w7 + w5^w6) k*]
REFERENCE_CURVATURE = {
    "complex": _table(1, 2, [(0, 0, 1, -2.0)]),
    "quaternionic": _table(3, 4, [(0, 0, 1, -2.0), (0, 2, 3, 2.0),
                                  (1, 0, 2, -2.0), (1, 1, 3, -2.0),
                                  (2, 0, 3, -2.0), (2, 1, 2, 2.0)]),
}


def hopf_project(bundle: HopfBundle, p: ArrayLike) -> np.ndarray:
    return bundle.project(p)


def curvature_numeric(bundle: HopfBundle, p: ArrayLike, a: int, b: int) -> np.ndarray:
    """Omega(D_a, D_b) for frame indices a, b (0-based, vertical fields first)."""
    d, n = bundle.d, bundle.ambient_dim - 1
    for idx in (a, b):
        if not 0 <= idx < n:
            raise InputError(f"frame index {idx} out of range 0..{n - 1}")
        if idx < d:
            raise InputError(f"frame index {idx} is vertical; curvature needs horizontal fields")
    p = bundle.check_point(p)
    D = bundle.frame(p)
    return bundle.curvature(p, D[..., a, :], D[..., b, :], check=False)


# ---------------------------------------------------------------------------
# Wong trajectories across charts

@dataclass
class ChartedTrajectory:
    """Wong trajectory that may switch between the two charts.

    ``g`` is the fiber coordinate (p = s(x) g) and ``R`` the transported
    adjoint matrix; ``points`` are the base points on the unit sphere and
    ``ambient`` the total-space points.
    """

    t: np.ndarray
    chart: np.ndarray
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    R: np.ndarray
    g: np.ndarray
    points: np.ndarray
    ambient: np.ndarray
    swaps: list = field(default_factory=list)
    step: float = 0.0

    def __len__(self) -> int:
        return len(self.t)


def _best_chart(P: np.ndarray) -> str:
    return "north" if P[0] <= 0 else "south"


def integrate_geodesic(bundle: HopfBundle, p0: ArrayLike, pdot0: ArrayLike, t_end: float,
                       h: float = 1e-3, record_every: int = 1, margin: float = 0.1,
                       chart: Optional[str] = None) -> ChartedTrajectory:
    """Integrate the Wong system of the bundle from ambient initial data.

    Fixed-step RK4 in one chart; when the base point comes within
    ``margin`` (chordal distance on the unit base sphere) of the chart's
    excluded pole the state is moved to the other chart with
    x' = x/|x|^2, u' = J u, v' = Ad_h v, R' = Ad_h R, g' = h g.
    The fiber coordinate obeys g' = (v - A(u)) g.
    """
    if not t_end > 0 or not h > 0:
        raise InputError("t_end and h must be positive")
    p0 = bundle.check_point(p0)
    P0 = bundle.project(p0)
    chart = _best_chart(P0) if chart is None else _chart_name(chart)
    x, u, v, g = bundle.descend(p0, pdot0, chart)
    d, m = bundle.d, bundle.m
    systems = {c: WongSystem(bundle.as_local_model(c)) for c in CHARTS}
    # swap once |x|^2 exceeds this (chordal distance 2/sqrt(1+|x|^2) to the pole)
    swap_r2 = 4.0 / margin ** 2 - 1.0
    nR = d * d

    def rhs(c, y):
        core = systems[c](0.0, y[:-4])
        r = y[2 * m:2 * m + d] - systems[c].last_potential_speed
        r1, r2, r3 = (r[0], 0.0, 0.0) if d == 1 else r
        g0, g1, g2, g3 = y[-4:]
        # (r1 i + r2 j + r3 k) g
        dg = (-r1 * g1 - r2 * g2 - r3 * g3, r1 * g0 + r2 * g3 - r3 * g2,
              -r1 * g3 + r2 * g0 + r3 * g1, r1 * g2 - r2 * g1 + r3 * g0)
        return np.concatenate([core, dg])

    y = np.concatenate([x, u, v, np.eye(d).ravel(), g])
    t = 0.0
    ts, ys, cs = [t], [y.copy()], [chart]
    swaps = []
    n_steps = max(1, int(np.ceil(t_end / h - 1e-9)))
    try:
        for i in range(n_steps):
            hi = h if i < n_steps - 1 else t_end - t
            k1 = rhs(chart, y)
            k2 = rhs(chart, y + 0.5 * hi * k1)
            k3 = rhs(chart, y + 0.5 * hi * k2)
            k4 = rhs(chart, y + hi * k3)
            y = y + (hi / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            t = (i + 1) * h if i < n_steps - 1 else t_end
            xx = y[:m]
            if xx @ xx > swap_r2:
                other, xn, jac, hq = bundle.transition(xx, chart)
                Ad = bundle.adjoint(hq)
                y = np.concatenate([
                    xn, jac @ y[m:2 * m], Ad @ y[2 * m:2 * m + d],
                    (Ad @ y[2 * m + d:2 * m + d + nR].reshape(d, d)).ravel(),
                    qmul(hq, y[-4:]),
                ])
                swaps.append(t)
                chart = other
            if (i + 1) % record_every == 0 or i == n_steps - 1:
                ts.append(t)
                ys.append(y.copy())
                cs.append(chart)
    except (DomainError, ArithmeticError) as exc:
        raise IntegrationError(f"charted integration failed at t={t:.6g}: {exc}") from exc
    ys = np.array(ys)
    cs = np.array(cs)
    xs = ys[:, :m]
    pts = np.empty((len(ts), m + 1))
    amb = np.empty((len(ts), bundle.ambient_dim))
    for c in CHARTS:
        sel = cs == c
        if np.any(sel):
            pts[sel] = bundle.from_chart(xs[sel], c)
            amb[sel] = _rmul(bundle.section(xs[sel], c), ys[sel, -4:])
    return ChartedTrajectory(
        t=np.array(ts), chart=cs, x=xs, u=ys[:, m:2 * m], v=ys[:, 2 * m:2 * m + d],
        R=ys[:, 2 * m + d:2 * m + d + nR].reshape(-1, d, d), g=ys[:, -4:],
        points=pts, ambient=amb, swaps=swaps, step=h,
    )


def great_circle(p0: np.ndarray, w: np.ndarray, t: np.ndarray) -> np.ndarray:
    """cos(t) p0 + sin(t) w for unit p0 and unit w orthogonal to it."""
    t = np.asarray(t, dtype=float)[..., None]
    return np.cos(t) * p0 + np.sin(t) * w


# ---------------------------------------------------------------------------
# twisted maps

@dataclass(frozen=True)
class TwistedMap:
    """Phi_alpha: T^2 -> S^3 (complex) or S^3 x S^3 -> S^7 (quaternionic).

    T^2 = R^2 / (2 pi Z)^2 with the flat metric:
        Phi(th1, th2) = cos(a) e^{i th1} + sin(a) e^{i th2} j.
    S^3 x S^3 with the product round metric:
        Psi(q1, q2) = (cos(a) q1, sin(a) q2)  (= cos(a) q1 + sin(a) q2 l).
    """

    alpha: float
    kind: str = "complex"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"kind must be one of {KINDS}")
        if not np.isfinite(self.alpha):
            raise InputError("alpha must be finite")

    @property
    def bundle(self) -> HopfBundle:
        return HopfBundle(self.kind)

    @property
    def domain_dim(self) -> int:
        return 2 if self.kind == "complex" else 6

    def __call__(self, y: ArrayLike) -> np.ndarray:
        return self.jet_at(y)[0]

    def jet_at(self, y: ArrayLike):
        """(value, first, second) derivatives along the domain frame.

        Torus: coordinate fields d/dth1, d/dth2.  S^3 x S^3: the
        left-invariant orthonormal fields (q1 xi, 0), (0, q2 xi).
        """
        ca, sa = np.cos(self.alpha), np.sin(self.alpha)
        y = np.asarray(y, dtype=float)
        if self.kind == "complex":
            t1, t2 = y[..., 0], y[..., 1]
            z = np.zeros_like(t1)
            val = np.stack([ca * np.cos(t1), ca * np.sin(t1), sa * np.cos(t2), sa * np.sin(t2)], -1)
            d1 = np.stack([
                np.stack([-ca * np.sin(t1), ca * np.cos(t1), z, z], -1),
                np.stack([z, z, -sa * np.sin(t2), sa * np.cos(t2)], -1),
            ], -2)
            d2 = np.zeros(y.shape[:-1] + (2, 2, 4))
            d2[..., 0, 0, :2] = -val[..., :2]
            d2[..., 1, 1, 2:] = -val[..., 2:]
            return val, d1, d2
        q1, q2 = y[..., :4], y[..., 4:]
        val = np.concatenate([ca * q1, sa * q2], -1)
        lead = y.shape[:-1]
        d1 = np.zeros(lead + (6, 8))
        d2 = np.zeros(lead + (6, 6, 8))
        q1x = qmul(q1[..., None, :], _XI)          # q1 xi_i
        q2x = qmul(q2[..., None, :], _XI)
        d1[..., :3, :4] = ca * q1x
        d1[..., 3:, 4:] = sa * q2x
        # e_i e_j Phi = q xi_j xi_i on the same factor
        xx = qmul(_XI[None, :, :], _XI[:, None, :])   # [i, j] = xi_j xi_i
        d2[..., :3, :3, :4] = ca * qmul(q1[..., None, None, :], xx)
        d2[..., 3:, 3:, 4:] = sa * qmul(q2[..., None, None, :], xx)
        return val, d1, d2

    def domain_connection(self, lead: tuple) -> np.ndarray:
        n = self.domain_dim
        gamma = np.zeros(lead + (n, n, n))
        if self.kind == "quaternionic":
            # nabla_{e_i} e_j = 1/2 [e_i, e_j] for left-invariant fields
            c = su2().c
            gamma[..., :3, :3, :3] = 0.5 * c
            gamma[..., 3:, 3:, 3:] = 0.5 * c
        return gamma

    def ambient_jet(self, y: ArrayLike, weights: Optional[np.ndarray] = None) -> MapJet:
        val, d1, d2 = self.jet_at(y)
        lead = val.shape[:-1]
        n = self.domain_dim
        return MapJet(val, d1, d2, np.broadcast_to(np.eye(n), lead + (n, n)),
                      self.domain_connection(lead), weights)

    def default_chart(self) -> str:
        """Chart whose excluded pole is farther from the image latitude cos(2 alpha)."""
        return "north" if np.cos(2 * self.alpha) <= 0 else "south"


def torus_grid(n: int) -> DomainGrid:
    return DomainGrid.torus((n, n))


def sample_s3xs3(count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(count, 2, 4))
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q.reshape(count, 8)


def domain_points(tmap: TwistedMap, resolution: int, seed: int = 0):
    """Grid points of T^2 (with trapezoid weights) or random points of S^3 x S^3."""
    if tmap.kind == "complex":
        grid = torus_grid(resolution)
        return grid.points().reshape(-1, 2), grid.weights().reshape(-1)
    pts = sample_s3xs3(resolution, seed)
    vol = (2 * np.pi ** 2) ** 2
    return pts, np.full(len(pts), vol / len(pts))


def chart_jet(bundle: HopfBundle, jet: MapJet, chart: str) -> BundleJet:
    """Exact chart jet (x, v) of a map into the total space from its ambient jet.

    x = phi(pi(p)) with second derivatives by the product and chain rules;
    v_j = Ad_g omega(e_j p) with g = s(x)^{-1} p.
    """
    p, p1, p2 = jet.values, jet.d1, jet.d2
    Q = bundle._project_bilinear
    P = bundle.project(p)
    P1 = Q(p1, p[..., None, :]) + Q(p[..., None, :], p1)
    P2 = (Q(p2, p[..., None, None, :]) + Q(p[..., None, None, :], p2)
          + Q(p1[..., :, None, :], p1[..., None, :, :]) + Q(p1[..., None, :, :], p1[..., :, None, :]))
    sign = _chart_sign(chart)
    t, w = P[..., 0], P[..., 1:]
    den = 1.0 - sign * t
    if np.any(den <= 0):
        raise DomainError(f"map image meets the pole excluded by the {chart} chart")
    t1, w1 = P1[..., 0], P1[..., 1:]
    t2, w2 = P2[..., 0], P2[..., 1:]
    D = den[..., None]
    Dn = den[..., None, None]
    Dnn = den[..., None, None, None]
    x = w / D
    x1 = w1 / Dn + sign * w[..., None, :] * t1[..., None] / Dn ** 2
    x2 = (w2 / Dnn
          + sign * (w1[..., :, None, :] * t1[..., None, :, None]
                    + w1[..., None, :, :] * t1[..., :, None, None]) / Dnn ** 2
          + sign * w[..., None, None, :] * t2[..., None] / Dnn ** 2
          + 2.0 * w[..., None, None, :] * (t1[..., :, None] * t1[..., None, :])[..., None] / Dnn ** 3)
    xi = bundle.xi
    # omega(e_j p)^a = <p_j, p xi_a>, e_i of it = <p_ij, p xi_a> + <p_j, p_i xi_a>
    Dp = bundle.vertical_frame(p)                                  # [..., a, k]
    om = np.einsum("...jk,...ak->...ja", p1, Dp)
    p1xi = _rmul(p1[..., :, None, :], xi)                          # [..., i, a, k]
    dom = (np.einsum("...ijk,...ak->...ija", p2, Dp)
           + np.einsum("...jk,...iak->...ija", p1, p1xi))
    base_jet = MapJet(x, x1, x2, jet.ginv, jet.gamma, jet.weights)
    if bundle.kind == "complex":
        return BundleJet(base_jet, om, dom)
    g = bundle.fiber_coordinate(x, p, chart)
    Ad = adjoint_matrix(g)
    v = np.einsum("...ab,...jb->...ja", Ad, om)
    # e_i g = (e_i s)^* p + s^* e_i p ; e_i(Ad_g z) = [e_i g g^*, Ad_g z] + Ad_g e_i z
    s1 = bundle.section_derivative(x[..., None, :], x1, chart)
    s = bundle.section(x, chart)
    g1 = _conj_dot(s1, p[..., None, :]) + _conj_dot(s[..., None, :], p1)
    rot = qmul(g1, qconj(g)[..., None, :])[..., 1:]                 # imaginary, [..., i, 3]
    vq = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], -1)
    comm = (qmul(rot[..., :, None, :] @ np.eye(3, 4, 1), vq[..., None, :, :])
            - qmul(vq[..., None, :, :], rot[..., :, None, :] @ np.eye(3, 4, 1)))[..., 1:]
    dv = comm + np.einsum("...ab,...ijb->...ija", Ad, dom)
    return BundleJet(base_jet, v, dv)


def charge_norm(tmap: TwistedMap, resolution: int = 16, seed: int = 0, route: str = "chart") -> float:
    """Sup norm of the Lorentz strength field of Phi_alpha over domain samples."""
    pts, w = domain_points(tmap, resolution, seed)
    amb = tmap.ambient_jet(pts, w)
    bundle = tmap.bundle
    if route == "ambient":
        _, norm = lorentz_charge_density(amb, bundle)
    else:
        chart = tmap.default_chart()
        _, norm = lorentz_charge_density(chart_jet(bundle, amb, chart), bundle.as_local_model(chart))
    return float(np.max(norm))


def charge_signed(tmap: TwistedMap, resolution: int = 16, seed: int = 0) -> float:
    """Meridional component of the Lorentz strength field, positive towards t = 1.

    For the twisted families the field is a multiple of the northward unit
    vector at every point, so this carries the norm together with a sign.
    The factor 1/2 converts unit-sphere lengths to the quotient metric.
    """
    pts, w = domain_points(tmap, resolution, seed)
    amb = tmap.ambient_jet(pts, w)
    bundle = tmap.bundle
    L, _ = lorentz_charge_density(amb, bundle)
    dP = bundle.project_derivative(amb.values, L)
    P = bundle.project(amb.values)
    north = np.zeros(P.shape[-1])
    north[0] = 1.0
    tangent = north - P[..., :1] * P
    tangent /= np.linalg.norm(tangent, axis=-1, keepdims=True)
    return float(0.5 * np.mean(np.sum(dP * tangent, -1)))


@dataclass
class ChargeProfile:
    alpha: np.ndarray
    norm: np.ndarray
    zeros: list
    zero_norms: list


def charge_profile(kind: str, alphas: ArrayLike, resolution: int = 16, seed: int = 0,
                   refine_tol: float = 1e-9, zero_tol: float = 1e-8, delta: float = 1e-4,
                   route: str = "chart", precomputed: Optional[ArrayLike] = None) -> ChargeProfile:
    """Lorentz-strength norm along the twisted family and its zeros.

    Candidate zeros are interior grid minima; each is refined by bisection
    on the sign of d(norm^2)/d alpha (symmetric difference with step
    ``delta``) and kept if the refined norm is below ``zero_tol``.
    ``precomputed`` reuses norms already evaluated on ``alphas``.
    """
    alphas = np.asarray(alphas, dtype=float)
    if alphas.ndim != 1 or len(alphas) < 3:
        raise InputError("need at least three alpha values")

    def norm(a):
        return charge_norm(TwistedMap(float(a), kind), resolution, seed, route)

    if precomputed is None:
        vals = np.array([norm(a) for a in alphas])
    else:
        vals = np.asarray(precomputed, dtype=float)
        if vals.shape != alphas.shape:
            raise InputError("precomputed norms must match the alpha grid")
    zeros, zero_norms = [], []

    def slope(a):
        return norm(a + delta) ** 2 - norm(a - delta) ** 2

    for k in range(1, len(alphas) - 1):
        if not (vals[k] <= vals[k - 1] and vals[k] <= vals[k + 1]):
            continue
        lo, hi = alphas[k - 1], alphas[k + 1]
        s_lo = slope(lo)
        if s_lo >= 0 or slope(hi) <= 0:
            continue
        while hi - lo > refine_tol:
            mid = 0.5 * (lo + hi)
            if slope(mid) < 0:
                lo = mid
            else:
                hi = mid
        a0 = 0.5 * (lo + hi)
        n0 = norm(a0)
        if n0 < zero_tol:
            zeros.append(a0)
            zero_norms.append(n0)
    return ChargeProfile(alphas, vals, zeros, zero_norms)


def twisted_tension(tmap: TwistedMap, resolution: int, seed: int = 0, route: str = "chart"):
    """Bundle tension report of Phi_alpha with analytic derivatives."""
    from .tension import bundle_tension

    pts, w = domain_points(tmap, resolution, seed)
    amb = tmap.ambient_jet(pts, w)
    bundle = tmap.bundle
    if route == "ambient":
        return bundle_tension(amb, bundle)
    chart = tmap.default_chart()
    return bundle_tension(chart_jet(bundle, amb, chart), bundle.as_local_model(chart))
