"""Dirichlet energy, tension fields and harmonic-map heat flow.

Maps are handled through jets: values together with first and second
derivatives along a domain frame ``e_i`` (coordinate vectors on grids, or
any frame with known connection coefficients on scattered samples).  The
tension in a frame is

    tau^K = g^{ij} (e_i(w^K_j) - Gamma^k_{ij} w^K_k + target terms),

with ``Gamma^k_{ij}`` the domain connection, ``nabla_{e_i} e_j = Gamma^k_{ij} e_k``.
Three target kinds are supported: a base chart (target Christoffels), a
trivialized Kaluza-Klein bundle (adapted-frame connection) and the unit
sphere in Euclidean space (ambient second derivatives projected to the
tangent space).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Protocol, Sequence, Union

import numpy as np
from numpy.typing import ArrayLike

from .errors import DomainError, InputError, NumericError
from .geometry import (BaseChart, KKLocalModel, _christoffel_from, frame_connection,
                       local_data, oneill_T)


# ---------------------------------------------------------------------------
# domains

@dataclass(frozen=True)
class DomainGrid:
    """Uniform coordinate grid with a (possibly non-flat) metric.

    ``metric`` maps points (..., n) to (..., n, n); None means Euclidean.
    Periodic axes exclude the right endpoint: the sample count covers one
    full period of length ``shape[a] * spacing[a]``.
    """

    shape: tuple
    spacing: tuple
    periodic: tuple
    origin: tuple = None
    metric: Optional[callable] = None
    metric_derivative: Optional[callable] = None

    def __post_init__(self):
        n = len(self.shape)
        if len(self.spacing) != n or len(self.periodic) != n:
            raise InputError("shape, spacing and periodic must have equal length")
        if any(not s > 0 for s in self.spacing):
            raise InputError("grid spacings must be positive")
        if any(int(k) < 3 for k in self.shape):
            raise InputError("each grid axis needs at least three samples")
        object.__setattr__(self, "shape", tuple(int(k) for k in self.shape))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if self.origin is None:
            object.__setattr__(self, "origin", (0.0,) * n)

    @classmethod
    def torus(cls, counts: Sequence[int], lengths: Sequence[float] = None, **kw) -> "DomainGrid":
        lengths = [2 * np.pi] * len(counts) if lengths is None else lengths
        return cls(tuple(counts), tuple(L / k for L, k in zip(lengths, counts)),
                   (True,) * len(counts), **kw)

    @classmethod
    def box(cls, counts: Sequence[int], lows: Sequence[float], highs: Sequence[float], **kw):
        return cls(tuple(counts), tuple((b - a) / (k - 1) for a, b, k in zip(lows, highs, counts)),
                   (False,) * len(counts), origin=tuple(lows), **kw)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def h_min(self) -> float:
        return min(self.spacing)

    def axes(self) -> list:
        return [o + h * np.arange(k) for o, h, k in zip(self.origin, self.spacing, self.shape)]

    def points(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def metric_at(self, pts: Optional[np.ndarray] = None) -> np.ndarray:
        pts = self.points() if pts is None else pts
        if self.metric is None:
            return np.broadcast_to(np.eye(self.n), pts.shape[:-1] + (self.n, self.n))
        return np.asarray(self.metric(pts), dtype=float)

    def christoffel(self, pts: Optional[np.ndarray] = None) -> np.ndarray:
        pts = self.points() if pts is None else pts
        if self.metric is None:
            return np.zeros(pts.shape[:-1] + (self.n,) * 3)
        chart = BaseChart(self.n, self.metric, self.metric_derivative)
        g = chart.g(pts)
        return _christoffel_from(g, np.linalg.inv(g), chart.dg(pts))

    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights times the Riemannian volume factor."""
        w = np.ones(self.shape)
        for a, (k, h, per) in enumerate(zip(self.shape, self.spacing, self.periodic)):
            wa = np.full(k, h)
            if not per:
                wa[0] = wa[-1] = 0.5 * h
            shape = [1] * self.n
            shape[a] = k
            w = w * wa.reshape(shape)
        if self.metric is not None:
            w = w * np.sqrt(np.linalg.det(self.metric_at()))
        return w

    # finite differences along grid axes (array axes 0..n-1)

    def diff(self, f: np.ndarray, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        if self.periodic[axis]:
            return (np.roll(f, -1, axis) - np.roll(f, 1, axis)) / (2 * h)
        f = np.moveaxis(f, axis, 0)
        out = np.empty_like(f)
        out[1:-1] = (f[2:] - f[:-2]) / (2 * h)
        out[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * h)
        out[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * h)
        return np.moveaxis(out, 0, axis)

    def diff2(self, f: np.ndarray, axis: int) -> np.ndarray:
        h = self.spacing[axis]
        if self.periodic[axis]:
            return (np.roll(f, -1, axis) - 2 * f + np.roll(f, 1, axis)) / h ** 2
        if self.shape[axis] < 4:
            raise InputError("bounded axes need at least four samples for second derivatives")
        f = np.moveaxis(f, axis, 0)
        out = np.empty_like(f)
        out[1:-1] = (f[2:] - 2 * f[1:-1] + f[:-2]) / h ** 2
        out[0] = (2 * f[0] - 5 * f[1] + 4 * f[2] - f[3]) / h ** 2
        out[-1] = (2 * f[-1] - 5 * f[-2] + 4 * f[-3] - f[-4]) / h ** 2
        return np.moveaxis(out, 0, axis)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """(*shape, *rest) -> (*shape, n, *rest)."""
        return np.stack([self.diff(f, a) for a in range(self.n)], axis=self.n)

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """(*shape, *rest) -> (*shape, n, n, *rest), standard 3-point stencils."""
        n = self.n
        rows = []
        for a in range(n):
            row = []
            for b in range(n):
                row.append(self.diff2(f, a) if a == b else self.diff(self.diff(f, a), b))
            rows.append(np.stack(row, axis=n))
        return np.stack(rows, axis=n)


# ---------------------------------------------------------------------------
# jets

@dataclass(frozen=True)
class MapJet:
    """Values and frame derivatives of a map at a set of domain points.

    values (..., k); d1[..., i, :] = e_i(Phi); d2[..., i, j, :] = e_i(e_j(Phi));
    ginv (..., n, n) the inverse domain metric in the frame; gamma[..., k, i, j]
    the domain connection; weights (...) quadrature weights, or None.
    """

    values: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    ginv: np.ndarray
    gamma: np.ndarray
    weights: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.d1.shape[-2]

    def trace(self, tensor: np.ndarray) -> np.ndarray:
        """g^{ij} T_ij for T (..., n, n, *rest)."""
        k = tensor.ndim - self.ginv.ndim
        letters = "abcdefgh"[:k]
        return np.einsum(f"...ij,...ij{letters}->...{letters}", self.ginv, tensor)

    def laplacian(self) -> np.ndarray:
        """g^{ij} (e_i e_j Phi - Gamma^k_ij e_k Phi), the flat-target tension."""
        corr = np.einsum("...kij,...kc->...ijc", self.gamma, self.d1)
        return self.trace(self.d2 - corr)


@dataclass(frozen=True)
class BundleJet:
    """Jet of a map into a trivialized bundle U x G.

    ``x`` is the jet of the base component; ``v[..., j, a]`` are the vertical
    frame components v^a_j = A^a(dPhi e_j) + theta^a(dPhi-hat e_j) and
    ``dv[..., i, j, a] = e_i(v^a_j)``.
    """

    x: MapJet
    v: np.ndarray
    dv: np.ndarray


@dataclass(frozen=True)
class GridMap:
    """A map sampled on a DomainGrid.

    kind: ``chart`` (values are target chart coordinates), ``sphere`` (unit
    vectors in R^{k+1}) or ``bundle`` (chart coordinates plus vertical frame
    components ``vertical[..., j, a]``).  Optional analytic derivatives
    ``first`` (*shape, n, k) and ``second`` (*shape, n, n, k) take precedence
    over finite differences.  ``affine`` (k, n) adds a linear part L y that
    is not periodic (e.g. the identity of a flat torus).
    """

    grid: DomainGrid
    kind: str
    values: np.ndarray
    first: Optional[np.ndarray] = None
    second: Optional[np.ndarray] = None
    vertical: Optional[np.ndarray] = None
    vertical_first: Optional[np.ndarray] = None
    affine: Optional[np.ndarray] = None
    sphere_tolerance: float = 1e-12

    def __post_init__(self):
        if self.kind not in ("chart", "sphere", "bundle"):
            raise InputError(f"unknown map kind {self.kind!r}")
        vals = np.asarray(self.values, dtype=float)
        if vals.shape[:self.grid.n] != self.grid.shape:
            raise InputError("map values do not match the grid shape")
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0][:self.grid.n]
            raise DomainError(f"map leaves the chart domain at grid index {tuple(int(i) for i in bad)}")
        if self.kind == "sphere":
            err = np.abs(np.linalg.norm(vals, axis=-1) - 1.0)
            if np.max(err) > self.sphere_tolerance:
                raise InputError(f"sphere-valued map has norm error {np.max(err):.2e}")
        if self.kind == "bundle" and self.vertical is None:
            raise InputError("bundle maps need vertical frame components")
        object.__setattr__(self, "values", vals)

    def jet(self) -> Union[MapJet, BundleJet]:
        g = self.grid
        pts = g.points()
        d1 = self.first if self.first is not None else g.gradient(self.values)
        if self.second is not None:
            d2 = self.second
        elif self.first is not None:
            dd = g.gradient(self.first)
            d2 = 0.5 * (dd + np.swapaxes(dd, g.n, g.n + 1))
        else:
            d2 = g.hessian(self.values)
        values = self.values
        if self.affine is not None:
            L = np.asarray(self.affine, dtype=float)
            values = values + np.einsum("kn,...n->...k", L, pts)
            d1 = d1 + np.swapaxes(L, 0, 1)
        ginv = np.linalg.inv(g.metric_at(pts))
        jet = MapJet(values, d1, d2, ginv, g.christoffel(pts), g.weights())
        if self.kind != "bundle":
            return jet
        v = np.asarray(self.vertical, dtype=float)
        dv = self.vertical_first if self.vertical_first is not None else g.gradient(v)
        return BundleJet(jet, v, dv)

    def with_values(self, values: np.ndarray) -> "GridMap":
        return replace(self, values=values, first=None, second=None)


def curve_jet(t: np.ndarray, x: np.ndarray, v: Optional[np.ndarray] = None) -> Union[MapJet, BundleJet]:
    """Finite-difference jet of a sampled curve on a uniform parameter grid."""
    t = np.asarray(t, dtype=float)
    grid = DomainGrid((len(t),), (float(t[1] - t[0]),), (False,), origin=(float(t[0]),))
    if v is None:
        return GridMap(grid, "chart", x).jet()
    return GridMap(grid, "bundle", x, vertical=np.asarray(v)[:, None, :]).jet()


# ---------------------------------------------------------------------------
# targets

class AmbientBundle(Protocol):
    """Principal bundle realized inside a unit sphere with the round metric."""

    def vertical_frame(self, p: np.ndarray) -> np.ndarray: ...       # (..., d, N)
    def connection_form(self, p: np.ndarray, X: np.ndarray) -> np.ndarray: ...
    def lorentz_endomorphism(self, p, V, H, check: bool = True) -> np.ndarray: ...


Target = Union[None, str, BaseChart, KKLocalModel, "AmbientBundle"]


@dataclass
class TensionReport:
    tension: np.ndarray
    sup: float
    l2: Optional[float]
    density: np.ndarray
    energy: Optional[float]
    horizontal: Optional[np.ndarray] = None
    vertical: Optional[np.ndarray] = None
    horizontal_sup: Optional[float] = None
    vertical_sup: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def summary(self) -> dict:
        out = {"tension_sup": self.sup, "tension_l2": self.l2, "energy": self.energy}
        if self.horizontal_sup is not None:
            out["horizontal_residual_sup"] = self.horizontal_sup
            out["vertical_residual_sup"] = self.vertical_sup
        return out


def _norm(vec: np.ndarray, metric: Optional[np.ndarray] = None) -> np.ndarray:
    if metric is None:
        return np.sqrt(np.einsum("...k,...k->...", vec, vec))
    return np.sqrt(np.abs(np.einsum("...ab,...a,...b->...", metric, vec, vec)))


def _quadrature(weights: Optional[np.ndarray], f: np.ndarray) -> Optional[float]:
    if weights is None:
        return None
    return float(np.sum(weights * f))


def _report(tension, norm, density, weights, **extra) -> TensionReport:
    return TensionReport(
        tension=tension,
        sup=float(np.max(norm)),
        l2=None if weights is None else float(np.sqrt(np.sum(weights * norm ** 2))),
        density=density,
        energy=_quadrature(weights, density),
        **extra,
    )


def _is_sphere(target) -> bool:
    return isinstance(target, str) and target == "sphere"


def energy_density(jet: Union[MapJet, BundleJet], target: Target = None) -> np.ndarray:
    """1/2 g^{ij} h(e_i Phi, e_j Phi) with h the target metric."""
    if isinstance(jet, BundleJet):
        if not isinstance(target, KKLocalModel):
            raise InputError("bundle jets need a KKLocalModel target")
        xj = jet.x
        g = target.base.g(xj.values)
        beta = np.broadcast_to(target.beta(xj.values), xj.values.shape[:-1] + (target.d,) * 2)
        hij = (np.einsum("...mn,...im,...jn->...ij", g, xj.d1, xj.d1)
               + np.einsum("...ab,...ia,...jb->...ij", beta, jet.v, jet.v))
        return 0.5 * xj.trace(hij)
    if isinstance(target, BaseChart):
        g = target.g(jet.values)
        hij = np.einsum("...mn,...im,...jn->...ij", g, jet.d1, jet.d1)
    elif isinstance(target, KKLocalModel):
        raise InputError("KKLocalModel targets need a bundle jet")
    else:
        hij = np.einsum("...ik,...jk->...ij", jet.d1, jet.d1)
    return 0.5 * jet.trace(hij)


def dirichlet_energy(jet: Union[MapJet, BundleJet], target: Target = None) -> float:
    """E = 1/2 int Tr_g(Phi^* h) dVol by the jet's quadrature weights."""
    dens = energy_density(jet, target)
    w = jet.x.weights if isinstance(jet, BundleJet) else jet.weights
    if w is None:
        raise InputError("jet carries no quadrature weights")
    return float(np.sum(w * dens))


def sphere_tension(jet: MapJet) -> np.ndarray:
    """Tangential projection of the ambient Laplacian of a unit-sphere map."""
    lap = jet.laplacian()
    return lap - np.einsum("...k,...k->...", lap, jet.values)[..., None] * jet.values


def tension_field(jet: MapJet, target: Target = None) -> TensionReport:
    """tau^l = g^{st}(d_s d_t Phi^l - Gamma^k_st d_k Phi^l + Gbar^l_{mu nu} d_s Phi^mu d_t Phi^nu)."""
    if isinstance(jet, BundleJet) or isinstance(target, KKLocalModel):
        raise InputError("use bundle_tension for bundle targets")
    dens = energy_density(jet, None if _is_sphere(target) else target)
    if _is_sphere(target):
        tau = sphere_tension(jet)
        return _report(tau, _norm(tau), dens, jet.weights, meta={"target": "sphere"})
    tau = jet.laplacian()
    metric = None
    if isinstance(target, BaseChart):
        g = target.g(jet.values)
        gamma = _christoffel_from(g, np.linalg.inv(g), target.dg(jet.values))
        tau = tau + jet.trace(np.einsum("...lmn,...im,...jn->...ijl", gamma, jet.d1, jet.d1))
        metric = g
    return _report(tau, _norm(tau, metric), dens, jet.weights)


def _frame_components(jet: BundleJet):
    w = np.concatenate([jet.x.d1, jet.v], axis=-1)        # w[..., j, K]
    dw = np.concatenate([jet.x.d2, jet.dv], axis=-1)      # e_i(w_j)
    return w, dw


def bundle_tension(jet, target) -> TensionReport:
    """Tension of a map into a Kaluza-Klein bundle, split into residuals.

    With a KKLocalModel target the jet must be a BundleJet and the frame
    formula is used; the horizontal components are the Lorentz-equation
    residual and the vertical ones the Hodge-gauge residual.  With an
    ambient bundle target (sphere-valued jet) the ambient tension is split
    with the vertical frame.
    """
    if isinstance(target, KKLocalModel):
        if not isinstance(jet, BundleJet):
            raise InputError("KKLocalModel targets need a bundle jet")
        model = target
        m = model.m
        x = jet.x.values
        conn = frame_connection(model, x).coefficients
        w, dw = _frame_components(jet)
        corr = np.einsum("...kij,...kK->...ijK", jet.x.gamma, w)
        quad = np.einsum("...KLM,...iL,...jM->...ijK", conn, w, w)
        tau = jet.x.trace(dw - corr + quad)
        ld = local_data(model, x)
        hn = _norm(tau[..., :m], ld.g)
        vn = _norm(tau[..., m:], ld.beta)
        total = np.sqrt(hn ** 2 + vn ** 2)
        dens = energy_density(jet, model)
        return _report(tau, total, dens, jet.x.weights,
                       horizontal=tau[..., :m], vertical=tau[..., m:],
                       horizontal_sup=float(np.max(hn)), vertical_sup=float(np.max(vn)),
                       meta={"route": "chart"})
    if isinstance(jet, BundleJet):
        raise InputError("ambient bundle targets need a sphere-valued jet")
    tau = sphere_tension(jet)
    D = target.vertical_frame(jet.values)
    tv = np.einsum("...k,...ak->...a", tau, D)
    th = tau - np.einsum("...a,...ak->...k", tv, D)
    dens = energy_density(jet, None)
    return _report(tau, _norm(tau), dens, jet.weights,
                   horizontal=th, vertical=tv,
                   horizontal_sup=float(np.max(_norm(th))), vertical_sup=float(np.max(_norm(tv))),
                   meta={"route": "ambient"})


def vertical_residual(jet: BundleJet, model: KKLocalModel) -> np.ndarray:
    """Vertical tension through the VP-connection trace formula.

    tau^V = g^{ij} [ (nabla^{P,V}_{dPhi e_i} V_j) - omega(dPhi(nabla_{e_i} e_j)) + T(V_i, H_j) ],
    where V_j, H_j are the vertical and horizontal parts of dPhi(e_j) and
    nabla^{P,V} is the vertical projection of the Levi-Civita connection.
    """
    m = model.m
    x = jet.x.values
    fc = frame_connection(model, x)
    T = oneill_T(model, x)
    xi, v = jet.x.d1, jet.v
    # nabla^{P,V}_{X_i} V_j = X_i(v_j) + (hv_vertical x_i + vv_vertical v_i) v_j
    cov = (jet.dv
           + np.einsum("...bma,...im,...ja->...ijb", fc.hv_vertical, xi, v)
           + np.einsum("...bca,...ic,...ja->...ijb", fc.vv_vertical, v, v))
    geo = np.einsum("...kij,...kb->...ijb", jet.x.gamma, v)
    tee = np.einsum("...bam,...ia,...jm->...ijb", T[..., m:, m:, :m], v, xi)
    return jet.x.trace(cov - geo + tee)


def lorentz_charge_density(jet, target):
    """Lorentz strength field and its pointwise norm.

    Chart route (BundleJet + KKLocalModel): base vectors
    L^rho = g^{ij} ginv^{alpha rho} beta_bc F^c_{alpha mu} e_i(Phi^mu) v^b_j.
    Ambient route (sphere jet + ambient bundle): horizontal ambient vectors
    L = -g^{ij} <omega(dPhi e_j), F>(dPhi(e_i)^H), whose projection is the
    chart field.
    """
    if isinstance(target, KKLocalModel):
        ld = local_data(target, jet.x.values)
        force = np.einsum("...sr,...bc,...csm,...im,...jb->...ijr",
                          ld.ginv, ld.beta, ld.F, jet.x.d1, jet.v)
        L = jet.x.trace(force)
        return L, _norm(L, ld.g)
    p = jet.values
    D = target.vertical_frame(p)
    om = np.einsum("...jk,...ak->...ja", jet.d1, D)
    H = jet.d1 - np.einsum("...ja,...ak->...jk", om, D)
    Vamb = np.einsum("...ja,...ak->...jk", om, D)
    n = jet.n
    acc = 0.0
    for i in range(n):
        for j in range(n):
            gij = jet.ginv[..., i, j]
            if np.all(gij == 0):
                continue
            acc = acc + gij[..., None] * target.lorentz_endomorphism(p, Vamb[..., j, :], H[..., i, :],
                                                                    check=False)
    L = -acc
    return L, _norm(L)


# ---------------------------------------------------------------------------
# heat flow

@dataclass
class FlowResult:
    map: GridMap
    energies: np.ndarray
    sup_tension: np.ndarray
    steps: int
    dt: float


def heat_flow(gmap: GridMap, target: Target, dt: float, steps: int,
              renormalize: bool = True, cfl: float = 0.2, slack: float = 1e-12,
              record_every: int = 1) -> FlowResult:
    """Explicit Euler for d Phi / ds = tau(Phi).

    ``target`` is ``"sphere"`` (ambient update, optional renormalization),
    a BaseChart, or None for a Euclidean target.  Energies are recorded
    before each step and after the last; any increase beyond ``slack``
    raises NumericError naming the step.
    """
    grid = gmap.grid
    if not dt > 0 or steps < 1:
        raise InputError("dt and steps must be positive")
    if dt >= cfl * grid.h_min ** 2:
        raise InputError(f"dt={dt:.3e} violates the CFL bound {cfl} * h^2 = {cfl * grid.h_min ** 2:.3e}")
    if gmap.kind == "bundle":
        raise InputError("heat flow supports chart and sphere maps")
    sphere = _is_sphere(target)
    current = gmap
    energies, sups = [], []
    prev = np.inf
    for k in range(steps + 1):
        jet = current.jet()
        rep = tension_field(jet, target)
        e = rep.energy
        if e > prev + slack:
            raise NumericError(f"energy increased by {e - prev:.3e} at step {k}")
        prev = e
        if k % record_every == 0 or k == steps:
            energies.append(e)
            sups.append(rep.sup)
        if k == steps:
            break
        new = current.values + dt * rep.tension
        if sphere and renormalize:
            new = new / np.linalg.norm(new, axis=-1, keepdims=True)
        current = replace(current, values=new, first=None, second=None)
    return FlowResult(current, np.array(energies), np.array(sups), steps, dt)
