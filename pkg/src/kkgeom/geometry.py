"""Local Kaluza-Klein calculus on a trivialization U x G.

Points are arrays of shape (..., m); every evaluator and every tensor
routine broadcasts over the leading axes, so whole grids can be processed
in one call.  Frame indices run over ``K = 0..m-1`` (horizontal
``E_mu = d_mu - A^a_mu xi_a``) followed by ``K = m..m+d-1`` (vertical
``E_a = xi_a``).  Connection coefficients are stored as ``G[K, L, M]``
with ``nabla_{E_L} E_M = G[K, L, M] E_K``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
from numpy.typing import ArrayLike

from .errors import NumericError
from .liealg import AlgebraMetric, StructureConstants

Evaluator = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-5
RICHARDSON_GATE = 1e-6


def central_derivative(
    f: Evaluator, x: np.ndarray, h: float = FD_STEP, gate: Optional[float] = RICHARDSON_GATE
) -> np.ndarray:
    """d f / d x^mu by Richardson-extrapolated central differences.

    ``f`` maps (..., m) to (..., *out); the result has shape (..., m, *out).
    The estimates at steps h and h/2 must agree to ``gate`` (relative to the
    magnitude of the derivative, floored at one), otherwise NumericError.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    eye = np.eye(m)
    xs = x[..., None, :]

    def diff(step):
        return (f(xs + step * eye) - f(xs - step * eye)) / (2.0 * step)

    d1 = diff(h)
    d2 = diff(0.5 * h)
    if gate is not None:
        scale = max(1.0, float(np.max(np.abs(d2), initial=0.0)))
        gap = float(np.max(np.abs(d1 - d2), initial=0.0))
        if not np.isfinite(gap) or gap > gate * scale:
            raise NumericError(f"finite-difference steps h and h/2 disagree by {gap:.3e}")
    return (4.0 * d2 - d1) / 3.0


def _inverse(mat: np.ndarray, what: str, x: np.ndarray) -> np.ndarray:
    try:
        inv = np.linalg.inv(mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular {what}", point=np.asarray(x).tolist()) from exc
    if not np.all(np.isfinite(inv)):
        raise NumericError(f"singular {what}", point=np.asarray(x).tolist())
    return inv


# ---------------------------------------------------------------------------
# data types

@dataclass(frozen=True)
class BaseChart:
    """Coordinate chart of the base with metric gbar(x) of shape (..., m, m).

    ``metric_derivative`` returns d gbar / d x^mu with shape (..., m, m, m)
    (derivative index first).  Without it, Christoffels are computed by
    central differences with step ``fd_step``.
    """

    dim: int
    metric: Evaluator
    metric_derivative: Optional[Evaluator] = None
    fd_step: float = FD_STEP
    name: str = ""
    is_constant: bool = False
    # (lambda, grad lambda) when gbar = lambda(x) * identity; lets the Wong
    # right-hand side skip the matrix inverse
    conformal_factor: Optional[tuple] = None

    @property
    def christoffel_mode(self) -> str:
        return "analytic" if self.metric_derivative is not None else "central-difference"

    def g(self, x: ArrayLike) -> np.ndarray:
        return np.asarray(self.metric(np.asarray(x, dtype=float)), dtype=float)

    def dg(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.metric_derivative is not None:
            return np.asarray(self.metric_derivative(x), dtype=float)
        return central_derivative(self.metric, x, self.fd_step)

    @classmethod
    def euclidean(cls, m: int) -> "BaseChart":
        eye = np.eye(m)

        def metric(x):
            return np.broadcast_to(eye, np.shape(x)[:-1] + (m, m))

        def dmetric(x):
            return np.zeros(np.shape(x)[:-1] + (m, m, m))

        return cls(m, metric, dmetric, name=f"euclidean{m}", is_constant=True)

    @classmethod
    def conformal(cls, m: int, factor: Evaluator, factor_gradient: Optional[Evaluator] = None,
                  name: str = "conformal") -> "BaseChart":
        """gbar = lambda(x) * identity, with optional analytic grad lambda (..., m)."""
        eye = np.eye(m)

        def metric(x):
            return factor(x)[..., None, None] * eye

        dmetric = None
        if factor_gradient is not None:
            def dmetric(x):
                return factor_gradient(x)[..., :, None, None] * eye

        return cls(m, metric, dmetric, name=name,
                   conformal_factor=None if factor_gradient is None else (factor, factor_gradient))


@dataclass(frozen=True)
class GaugePotential:
    """A^a_mu(x) of shape (..., d, m), with optional derivative (..., m, d, m)."""

    evaluator: Evaluator
    derivative: Optional[Evaluator] = None
    fd_step: float = FD_STEP

    @property
    def derivative_mode(self) -> str:
        return "analytic" if self.derivative is not None else "central-difference"

    def __call__(self, x: ArrayLike) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)

    def d(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.derivative is not None:
            return np.asarray(self.derivative(x), dtype=float)
        return central_derivative(self.evaluator, x, self.fd_step)

    @classmethod
    def zero(cls, d: int, m: int) -> "GaugePotential":
        return cls(lambda x: np.zeros(np.shape(x)[:-1] + (d, m)),
                   lambda x: np.zeros(np.shape(x)[:-1] + (m, d, m)))

    @classmethod
    def constant(cls, coeffs: ArrayLike) -> "GaugePotential":
        a = np.array(coeffs, dtype=float)
        d, m = a.shape
        return cls(lambda x: np.broadcast_to(a, np.shape(x)[:-1] + (d, m)),
                   lambda x: np.zeros(np.shape(x)[:-1] + (m, d, m)))

    @classmethod
    def linear(cls, coeffs: ArrayLike) -> "GaugePotential":
        """A^a_mu(x) = W[a, mu, nu] x^nu."""
        w = np.array(coeffs, dtype=float)
        d, m, _ = w.shape
        dw = np.ascontiguousarray(np.transpose(w, (2, 0, 1)))  # [nu, a, mu]

        def ev(x):
            return w @ x if np.ndim(x) == 1 else np.einsum("amn,...n->...am", w, x)

        def dev(x):
            return dw if np.ndim(x) == 1 else np.broadcast_to(dw, np.shape(x)[:-1] + (m, d, m))

        return cls(ev, dev)


@dataclass(frozen=True)
class KKLocalModel:
    """Local Kaluza-Klein data (gbar, A, beta, structure constants) on U x G."""

    base: BaseChart
    gauge: GaugePotential
    fiber: AlgebraMetric
    algebra: StructureConstants
    name: str = ""
    sample_point: Optional[tuple] = None

    def __post_init__(self):
        m, d = self.base.dim, self.algebra.dim
        x0 = np.zeros(m) if self.sample_point is None else np.asarray(self.sample_point, float)
        shapes = {
            "base metric": (self.base.g(x0).shape, (m, m)),
            "gauge potential": (self.gauge(x0).shape, (d, m)),
            "fiber metric": (self.fiber(x0).shape, (d, d)),
        }
        for what, (got, want) in shapes.items():
            if tuple(got) != want:
                raise ValueError(f"{what} has shape {tuple(got)}, expected {want}")

    @property
    def m(self) -> int:
        return self.base.dim

    @property
    def d(self) -> int:
        return self.algebra.dim

    @property
    def n(self) -> int:
        return self.base.dim + self.algebra.dim

    def beta(self, x: ArrayLike) -> np.ndarray:
        return self.fiber(x)

    def dbeta(self, x: ArrayLike) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.fiber.derivative is not None:
            return np.asarray(self.fiber.derivative(x), dtype=float)
        return central_derivative(self.fiber.evaluator, x, self.base.fd_step)


# ---------------------------------------------------------------------------
# pointwise local data

class LocalData(NamedTuple):
    """Everything the frame formulas need at a batch of points."""

    g: np.ndarray       # (..., m, m)
    ginv: np.ndarray
    gamma: np.ndarray   # (..., m, m, m) base Christoffels [rho, mu, nu]
    A: np.ndarray       # (..., d, m)
    F: np.ndarray       # (..., d, m, m)
    beta: np.ndarray    # (..., d, d)
    binv: np.ndarray
    B: np.ndarray       # (..., d, m, d) [a, mu, d]
    L: np.ndarray       # (..., d, d, d) [a, c, d]


def _christoffel_from(g: np.ndarray, ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    # dg[..., s, a, b] = d_s g_ab ; lowered[s, mu, nu] = d_mu g_{s nu} + d_nu g_{s mu} - d_s g_{mu nu}
    lowered = (np.einsum("...msn->...smn", dg) + np.einsum("...nsm->...smn", dg) - dg)
    return 0.5 * np.einsum("...rs,...smn->...rmn", ginv, lowered)


def christoffel(base: BaseChart, x: ArrayLike) -> np.ndarray:
    """Levi-Civita symbols Gamma^rho_{mu nu} of gbar, shape (..., m, m, m)."""
    x = np.asarray(x, dtype=float)
    g = base.g(x)
    ginv = _inverse(g, "base metric", x)
    return _christoffel_from(g, ginv, base.dg(x))


def _field_strength_from(sc: StructureConstants, A: np.ndarray, dA: np.ndarray) -> np.ndarray:
    # dA[..., mu, a, nu] = d_mu A^a_nu
    curl = np.einsum("...man->...amn", dA) - np.einsum("...nam->...amn", dA)
    if sc.is_abelian:
        return curl
    return curl + np.einsum("abc,...bm,...cn->...amn", sc.c, A, A)


def field_strength(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """F^a_{mu nu} = d_mu A^a_nu - d_nu A^a_mu + C^a_bc A^b_mu A^c_nu."""
    x = np.asarray(x, dtype=float)
    return _field_strength_from(model.algebra, model.gauge(x), model.gauge.d(x))


def _b_from(sc: StructureConstants, beta: np.ndarray, dbeta: np.ndarray, A: np.ndarray) -> np.ndarray:
    # X[a, mu, d] = d_mu beta_ad
    X = np.einsum("...mad->...amd", dbeta)
    if sc.is_abelian:
        return X
    return X - _bracket_part(sc.c, A, beta)


def _bracket_part(c: np.ndarray, A: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Y + Z with Y[a, mu, d] = beta([A_mu, xi_a], xi_d) and Z = Y with a <-> d."""
    Y = np.einsum("cba,...bm,...cd->...amd", c, A, beta)
    return Y + np.einsum("...dma->...amd", Y)


def b_coeffs(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """B_{a mu d} = d_mu beta_ad - beta([A_mu, xi_a], xi_d) - beta(xi_a, [A_mu, xi_d])."""
    x = np.asarray(x, dtype=float)
    return _b_from(model.algebra, model.beta(x), model.dbeta(x), model.gauge(x))


def _l_from(sc: StructureConstants, beta: np.ndarray) -> np.ndarray:
    # P[a, c, d] = beta(xi_a, [xi_c, xi_d])
    P = np.einsum("...ae,ecd->...acd", beta, sc.c)
    return P - np.einsum("...cda->...acd", P) - np.einsum("...dac->...acd", P)


def l_coeffs(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """L_{acd} = beta(xi_a,[xi_c,xi_d]) - beta(xi_c,[xi_d,xi_a]) - beta(xi_d,[xi_a,xi_c])."""
    return _l_from(model.algebra, model.beta(np.asarray(x, dtype=float)))


def local_data(model: KKLocalModel, x: ArrayLike) -> LocalData:
    x = np.asarray(x, dtype=float)
    sc = model.algebra
    g = model.base.g(x)
    ginv = _inverse(g, "base metric", x)
    gamma = _christoffel_from(g, ginv, model.base.dg(x))
    A = model.gauge(x)
    F = _field_strength_from(sc, A, model.gauge.d(x))
    beta = np.broadcast_to(model.beta(x), x.shape[:-1] + (model.d, model.d))
    binv = _inverse(beta, "fiber metric", x)
    B = _b_from(sc, beta, model.dbeta(x), A)
    L = _l_from(sc, beta)
    return LocalData(g, ginv, gamma, A, F, beta, binv, B, L)


# ---------------------------------------------------------------------------
# metric and frame

def kk_metric_components(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """Matrix of the Kaluza-Klein metric in the coframe (dx^mu, theta^a)."""
    x = np.asarray(x, dtype=float)
    g = model.base.g(x)
    A = model.gauge(x)
    beta = np.broadcast_to(model.beta(x), x.shape[:-1] + (model.d, model.d))
    bA = np.einsum("...ab,...bn->...an", beta, A)
    top = np.concatenate([g + np.einsum("...am,...an->...mn", A, bA), np.swapaxes(bA, -1, -2)], axis=-1)
    bottom = np.concatenate([bA, beta], axis=-1)
    return np.concatenate([top, bottom], axis=-2)


def frame_metric(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """Block-diagonal metric (gbar, beta) in the adapted frame (E_mu, E_a)."""
    x = np.asarray(x, dtype=float)
    m, d = model.m, model.d
    out = np.zeros(x.shape[:-1] + (m + d, m + d))
    out[..., :m, :m] = model.base.g(x)
    out[..., m:, m:] = model.beta(x)
    return out


def frame_brackets(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    """c[K, L, M] with [E_L, E_M] = c[K, L, M] E_K."""
    x = np.asarray(x, dtype=float)
    m, d = model.m, model.d
    sc = model.algebra
    A = model.gauge(x)
    F = field_strength(model, x)
    c = np.zeros(x.shape[:-1] + (m + d,) * 3)
    c[..., m:, :m, :m] = -F
    # [E_mu, E_a] = [A_mu, xi_a]^c E_c
    mixed = np.einsum("cba,...bm->...cma", sc.c, A)
    c[..., m:, :m, m:] = mixed
    c[..., m:, m:, :m] = -np.swapaxes(mixed, -1, -2)
    c[..., m:, m:, m:] = -sc.c
    return c


@dataclass(frozen=True)
class FrameConnection:
    """Levi-Civita coefficients in the adapted frame, split into blocks.

    Block names read ``<L><M>_<part>`` for nabla_{E_L} E_M, with h/v the
    horizontal/vertical frame slot, e.g. ``hv_vertical[b, mu, a]`` is the
    E_b-component of nabla_{E_mu} E_a.
    """

    m: int
    d: int
    base: np.ndarray           # [rho, mu, nu]
    hh_vertical: np.ndarray    # [a, mu, nu]
    hv_horizontal: np.ndarray  # [rho, mu, a]
    hv_vertical: np.ndarray    # [b, mu, a]
    vh_horizontal: np.ndarray  # [rho, a, mu]
    vh_vertical: np.ndarray    # [b, a, mu]
    vv_horizontal: np.ndarray  # [rho, a, b]
    vv_vertical: np.ndarray    # [c, a, b]

    @property
    def coefficients(self) -> np.ndarray:
        """Full array G[K, L, M] with nabla_{E_L} E_M = G[K, L, M] E_K."""
        m = self.m
        lead = self.base.shape[:-3]
        n = m + self.d
        G = np.zeros(lead + (n, n, n))
        G[..., :m, :m, :m] = self.base
        G[..., m:, :m, :m] = self.hh_vertical
        G[..., :m, :m, m:] = self.hv_horizontal
        G[..., m:, :m, m:] = self.hv_vertical
        G[..., :m, m:, :m] = self.vh_horizontal
        G[..., m:, m:, :m] = self.vh_vertical
        G[..., :m, m:, m:] = self.vv_horizontal
        G[..., m:, m:, m:] = self.vv_vertical
        return G


def _connection_from(sc: StructureConstants, m: int, d: int, ld: LocalData,
                     dbeta: np.ndarray) -> FrameConnection:
    # shared horizontal part of the mixed blocks: -1/2 ginv^{rho alpha} beta_ab F^b_{alpha mu}
    mixed_h = -0.5 * np.einsum("...rs,...ab,...bsm->...rma", ld.ginv, ld.beta, ld.F)
    X = np.einsum("...mad->...amd", dbeta)
    if sc.is_abelian:
        YmZ = np.zeros_like(X)
    else:
        Y = np.einsum("cba,...bm,...cd->...amd", sc.c, ld.A, ld.beta)
        YmZ = Y - np.einsum("...dma->...amd", Y)
    hv_vert = 0.5 * np.einsum("...db,...amd->...bma", ld.binv, X + YmZ)
    vh_vert = 0.5 * np.einsum("...db,...amd->...bam", ld.binv, ld.B)
    vv_h = -0.5 * np.einsum("...mr,...amb->...rab", ld.ginv, ld.B)
    vv_v = 0.5 * np.einsum("...dc,...abd->...cab", ld.binv, ld.L)
    return FrameConnection(
        m=m, d=d,
        base=ld.gamma,
        hh_vertical=-0.5 * ld.F,
        hv_horizontal=mixed_h,
        hv_vertical=hv_vert,
        vh_horizontal=np.swapaxes(mixed_h, -1, -2),
        vh_vertical=vh_vert,
        vv_horizontal=vv_h,
        vv_vertical=vv_v,
    )


def frame_connection(model: KKLocalModel, x: ArrayLike) -> FrameConnection:
    x = np.asarray(x, dtype=float)
    ld = local_data(model, x)
    return _connection_from(model.algebra, model.m, model.d, ld, model.dbeta(x))


def geodesic_acceleration(conn: np.ndarray, w: np.ndarray) -> np.ndarray:
    """-G^K_{LM} w^L w^M for frame velocity w (..., n)."""
    return -np.einsum("...klm,...l,...m->...k", conn, w, w)


# ---------------------------------------------------------------------------
# O'Neill tensors, Theta, Lorentz force

@dataclass(frozen=True)
class OneillTensors:
    """T[K, L, M] and A[K, L, M] with T(E_L, E_M) = T[K, L, M] E_K (same for A)."""

    m: int
    d: int
    T: np.ndarray
    A: np.ndarray


def oneill_tensors(model: KKLocalModel, x: ArrayLike) -> OneillTensors:
    x = np.asarray(x, dtype=float)
    m, d = model.m, model.d
    ld = local_data(model, x)
    n = m + d
    T = np.zeros(x.shape[:-1] + (n, n, n))
    A = np.zeros_like(T)
    # T(E_a, E_mu) = 1/2 beta^{db} B_{a mu d} E_b ; T(E_a, E_b) = -1/2 ginv^{mu rho} B_{a mu b} E_rho
    T[..., m:, m:, :m] = 0.5 * np.einsum("...db,...amd->...bam", ld.binv, ld.B)
    T[..., :m, m:, m:] = -0.5 * np.einsum("...mr,...amb->...rab", ld.ginv, ld.B)
    # A(E_mu, E_nu) = -1/2 F^a_{mu nu} E_a ; A(E_mu, E_a) = -1/2 beta_ab F^b_{alpha mu} ginv^{alpha rho} E_rho
    A[..., m:, :m, :m] = -0.5 * ld.F
    A[..., :m, :m, m:] = -0.5 * np.einsum("...rs,...ab,...bsm->...rma", ld.ginv, ld.beta, ld.F)
    return OneillTensors(m, d, T, A)


def oneill_T(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    return oneill_tensors(model, x).T


def oneill_A(model: KKLocalModel, x: ArrayLike) -> np.ndarray:
    return oneill_tensors(model, x).A


def theta_tensor(model: KKLocalModel, x: ArrayLike, D: ArrayLike, xi: ArrayLike) -> np.ndarray:
    """Vertical components of Theta(D, xi*) for a frame vector D (..., m+d).

    Theta(D, xi*) = 1/2 (ad*_xi w + ad*_w xi) + T(xi*, D^H), w = omega(D).
    """
    x = np.asarray(x, dtype=float)
    D = np.asarray(D, dtype=float)
    xi = np.asarray(xi, dtype=float)
    m = model.m
    ld = local_data(model, x)
    sc = model.algebra
    u, w = D[..., :m], D[..., m:]

    def ad_star(zeta, eta):
        # beta^{-1} ad_zeta^T beta eta
        ad = sc.ad(zeta)
        return np.einsum("...cb,...eb,...ef,...f->...c", ld.binv, ad, ld.beta, eta)

    sym = 0.5 * (ad_star(xi, w) + ad_star(w, xi))
    tee = 0.5 * np.einsum("...db,...amd,...a,...m->...b", ld.binv, ld.B, xi, u)
    return sym + tee


def lorentz_force_term(model: KKLocalModel, x: ArrayLike, u: ArrayLike, v: ArrayLike) -> np.ndarray:
    """ginv^{alpha rho} beta_bc F^c_{alpha mu} u^mu v^b."""
    x = np.asarray(x, dtype=float)
    g = model.base.g(x)
    ginv = _inverse(g, "base metric", x)
    F = field_strength(model, x)
    beta = model.beta(x)
    return np.einsum("...sr,...bc,...csm,...m,...b->...r", ginv, beta, F,
                     np.asarray(u, float), np.asarray(v, float))
