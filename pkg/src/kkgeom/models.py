"""Built-in local models used by the scenario runner and the demos."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .geometry import BaseChart, GaugePotential, KKLocalModel
from .hopf import HopfBundle
from .liealg import AlgebraMetric, StructureConstants, abelian, su2


def larmor(field: float = 1.0, fiber_metric: float = 1.0) -> KKLocalModel:
    """Flat plane with constant abelian field strength F_12 = field (symmetric gauge)."""
    if not fiber_metric > 0:
        raise InputError("fiber_metric must be positive")
    W = np.zeros((1, 2, 2))
    W[0, 0, 1] = -0.5 * field
    W[0, 1, 0] = 0.5 * field
    return KKLocalModel(BaseChart.euclidean(2), GaugePotential.linear(W),
                        AlgebraMetric.constant([[fiber_metric]]), abelian(1), name="larmor")


def _affine_gauge(constant: np.ndarray, linear: np.ndarray) -> GaugePotential:
    if not np.any(constant):
        return GaugePotential.linear(linear)
    d, m, _ = linear.shape
    dw = np.transpose(linear, (2, 0, 1)).copy()

    def ev(x):
        x = np.asarray(x, dtype=float)
        return constant + (linear @ x if x.ndim == 1 else np.einsum("amn,...n->...am", linear, x))

    def dev(x):
        return dw if np.ndim(x) == 1 else np.broadcast_to(dw, np.shape(x)[:-1] + (m, d, m))

    return GaugePotential(ev, dev)


def su2_bi_invariant(dim: int = 3, potential_linear=None, potential_constant=None,
                     fiber_scale: float = 1.0) -> KKLocalModel:
    """Flat base, su(2) fiber with beta = fiber_scale * identity.

    The default potential A^a_mu = 1/2 eps_{a mu nu} x^nu (dim 3) has a
    non-abelian field strength with both curl and bracket parts.
    """
    if dim < 1:
        raise InputError("dim must be positive")
    if not fiber_scale > 0:
        raise InputError("fiber_scale must be positive")
    if potential_linear is None:
        W = np.zeros((3, dim, dim))
        if dim >= 3:
            for a, mu, nu, s in [(0, 1, 2, 1), (0, 2, 1, -1), (1, 2, 0, 1), (1, 0, 2, -1),
                                 (2, 0, 1, 1), (2, 1, 0, -1)]:
                W[a, mu, nu] = 0.5 * s
    else:
        W = np.asarray(potential_linear, dtype=float)
    A0 = np.zeros((3, dim)) if potential_constant is None else np.asarray(potential_constant, float)
    if W.shape != (3, dim, dim) or A0.shape != (3, dim):
        raise InputError(f"potential tables must have shapes (3, {dim}, {dim}) and (3, {dim})")
    return KKLocalModel(BaseChart.euclidean(dim), _affine_gauge(A0, W),
                        AlgebraMetric.constant(fiber_scale * np.eye(3)), su2(),
                        name="su2-bi-invariant")


def warped_abelian(dim: int = 2, field=None, warp=None, fiber_metric: float = 1.0) -> KKLocalModel:
    """Flat base, constant abelian field, fiber metric beta0 * exp(2 c.x)."""
    if not fiber_metric > 0:
        raise InputError("fiber_metric must be positive")
    F = np.zeros((dim, dim)) if field is None else np.asarray(field, dtype=float)
    c = np.zeros(dim) if warp is None else np.asarray(warp, dtype=float)
    if F.shape != (dim, dim) or c.shape != (dim,):
        raise InputError(f"field must be {dim}x{dim} and warp of length {dim}")
    if np.max(np.abs(F + F.T), initial=0.0) > 1e-12:
        raise InputError("field must be antisymmetric")
    # A_mu = -1/2 F_{mu nu} x^nu gives dA = F
    W = (-0.5 * F)[None]

    def beta(x):
        x = np.asarray(x, dtype=float)
        return fiber_metric * np.exp(2.0 * (x @ c))[..., None, None]

    def dbeta(x):
        b = beta(x)
        return 2.0 * c.reshape((1,) * (np.ndim(x) - 1) + (dim, 1, 1)) * b[..., None, :, :]

    fiber = AlgebraMetric(beta, is_constant=False, derivative=dbeta, samples=[np.zeros(dim)])
    return KKLocalModel(BaseChart.euclidean(dim), GaugePotential.linear(W), fiber, abelian(1),
                        name="warped-abelian")


def inline(structure_constants, fiber_metric, potential_linear, potential_constant=None) -> KKLocalModel:
    """Flat base with tables given directly: C[c, a, b], constant beta, A = A0 + W x."""
    try:
        sc = StructureConstants(np.asarray(structure_constants, dtype=float), name="inline")
    except ValueError as exc:
        raise InputError(f"structure constants rejected: {exc}") from exc
    if sc.jacobi_residual() > 1e-10:
        raise InputError("structure constants violate the Jacobi identity")
    W = np.asarray(potential_linear, dtype=float)
    d = sc.dim
    if W.ndim != 3 or W.shape[0] != d or W.shape[1] != W.shape[2]:
        raise InputError(f"potential_linear must have shape ({d}, m, m)")
    m = W.shape[1]
    A0 = np.zeros((d, m)) if potential_constant is None else np.asarray(potential_constant, float)
    beta = np.asarray(fiber_metric, dtype=float)
    if A0.shape != (d, m) or beta.shape != (d, d):
        raise InputError(f"potential_constant must be ({d}, {m}) and fiber_metric ({d}, {d})")
    try:
        fiber = AlgebraMetric.constant(beta)
    except ValueError as exc:
        raise InputError(f"fiber metric rejected: {exc}") from exc
    return KKLocalModel(BaseChart.euclidean(m), _affine_gauge(A0, W), fiber, sc, name="inline")


def hopf_model(kind: str, chart: str = "north") -> KKLocalModel:
    return HopfBundle(kind).as_local_model(chart)


BUILDERS = {
    "larmor": larmor,
    "su2_bi_invariant": su2_bi_invariant,
    "warped_abelian": warped_abelian,
    "inline": inline,
    "hopf_complex": lambda chart="north": hopf_model("complex", chart),
    "hopf_quaternionic": lambda chart="north": hopf_model("quaternionic", chart),
}


def build(name: str, params: dict) -> KKLocalModel:
    if name not in BUILDERS:
        raise InputError(f"unknown model {name!r}; choose from {sorted(BUILDERS)}")
    try:
        return BUILDERS[name](**params)
    except TypeError as exc:
        raise InputError(f"bad parameters for model {name!r}: {exc}") from exc
