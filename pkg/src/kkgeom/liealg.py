"""Lie-algebra and normed-algebra kernel.

Structure constants are stored densely as ``c[out, left, right]`` so that
``[x, y]^c = c[c, a, b] x^a y^b``.  Quaternions and octonions are plain
float arrays whose last axis holds the coefficients in the bases
``(1, i, j, k)`` and ``(1, i, j, k, l, il, jl, kl)``; every product
broadcasts over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

import numpy as np
from numpy.typing import ArrayLike

QUAT_BASIS = ("1", "i", "j", "k")
OCT_BASIS = ("1", "i", "j", "k", "l", "il", "jl", "kl")


class AlgebraError(ValueError):
    """Raised for malformed algebra data (shapes, symmetry, definiteness)."""


# ---------------------------------------------------------------------------
# quaternions

def qmul(p: ArrayLike, q: ArrayLike) -> np.ndarray:
    """Hamilton product of quaternion arrays (last axis of length 4)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    a1, b1, c1, d1 = np.moveaxis(p, -1, 0)
    a2, b2, c2, d2 = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            a1 * a2 - b1 * b2 - c1 * c2 - d1 * d2,
            a1 * b2 + b1 * a2 + c1 * d2 - d1 * c2,
            a1 * c2 - b1 * d2 + c1 * a2 + d1 * b2,
            a1 * d2 + b1 * c2 - c1 * b2 + d1 * a2,
        ],
        axis=-1,
    )


_QCONJ = np.array([1.0, -1.0, -1.0, -1.0])
_OCONJ = np.array([1.0, -1, -1, -1, -1, -1, -1, -1])


def qconj(q: ArrayLike) -> np.ndarray:
    return np.asarray(q, dtype=float) * _QCONJ


def qnorm(q: ArrayLike) -> np.ndarray:
    return np.linalg.norm(np.asarray(q, dtype=float), axis=-1)


def qinv(q: ArrayLike) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return qconj(q) / np.sum(q * q, axis=-1, keepdims=True)


def qbasis(name: str) -> np.ndarray:
    e = np.zeros(4)
    e[QUAT_BASIS.index(name)] = 1.0
    return e


def imag_to_quat(v: ArrayLike) -> np.ndarray:
    """Embed coefficient vectors along (i, j, k) as pure quaternions."""
    v = np.asarray(v, dtype=float)
    return np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)


# ---------------------------------------------------------------------------
# octonions as Cayley-Dickson pairs of quaternions

def oct_mul(x: ArrayLike, y: ArrayLike) -> np.ndarray:
    """Octonion product with the doubling rule (a,b)(c,d) = (ac - d*b, da + bc*)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    a, b = x[..., :4], x[..., 4:]
    c, d = y[..., :4], y[..., 4:]
    first = qmul(a, c) - qmul(qconj(d), b)
    second = qmul(d, a) + qmul(b, qconj(c))
    return np.concatenate([first, second], axis=-1)


def oct_conj(x: ArrayLike) -> np.ndarray:
    return np.asarray(x, dtype=float) * _OCONJ


def oct_norm(x: ArrayLike) -> np.ndarray:
    return np.linalg.norm(np.asarray(x, dtype=float), axis=-1)


def oct_basis(name: str) -> np.ndarray:
    e = np.zeros(8)
    e[OCT_BASIS.index(name)] = 1.0
    return e


def oct_table() -> list[list[str]]:
    """Signed basis labels of e_a * e_b, e.g. ``table[4][1] == '-il'``."""
    eye = np.eye(8)
    rows = []
    for a in range(8):
        row = []
        for b in range(8):
            prod = oct_mul(eye[a], eye[b])
            k = int(np.argmax(np.abs(prod)))
            sign = "-" if prod[k] < 0 else ""
            row.append(sign + OCT_BASIS[k])
        rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# structure constants

@dataclass(frozen=True)
class StructureConstants:
    """Bracket coefficients C^c_{ab} of a finite-dimensional Lie algebra."""

    c: np.ndarray
    name: str = ""

    def __post_init__(self):
        c = np.array(self.c, dtype=float)
        if c.ndim != 3 or len(set(c.shape)) != 1 or c.shape[0] == 0:
            raise AlgebraError(f"structure constants must be d x d x d, got {c.shape}")
        if np.max(np.abs(c + np.swapaxes(c, 1, 2)), initial=0.0) > 1e-12:
            raise AlgebraError("structure constants are not antisymmetric")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.c.shape[0]

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.c)

    def ad(self, z: ArrayLike) -> np.ndarray:
        """Matrix of ad_z, acting on column coefficient vectors (batched over z)."""
        return np.einsum("cab,...a->...cb", self.c, np.asarray(z, dtype=float))

    def jacobi_residual(self) -> float:
        c = self.c
        # sum_e C^e_ab C^f_ec + cyclic(a, b, c)
        t = np.einsum("eab,fec->fabc", c, c)
        total = t + np.transpose(t, (0, 2, 3, 1)) + np.transpose(t, (0, 3, 1, 2))
        return float(np.max(np.abs(total), initial=0.0))

    def to_dict(self) -> dict:
        """JSON-ready form, the same layout the scenario runner accepts."""
        return {"name": self.name, "c": self.c.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "StructureConstants":
        return cls(np.asarray(data["c"], dtype=float), name=data.get("name", ""))


def abelian(d: int) -> StructureConstants:
    return StructureConstants(np.zeros((d, d, d)), name=f"abelian({d})")


def structure_constants_from_commutators(
    basis: np.ndarray,
    mul: Callable[[np.ndarray, np.ndarray], np.ndarray],
    name: str = "",
) -> StructureConstants:
    """Structure constants of span(basis) under the commutator xy - yx.

    ``basis`` is a (d, n) array of algebra elements; the span must close
    under the commutator (checked by least squares residual).
    """
    basis = np.asarray(basis, dtype=float)
    d = basis.shape[0]
    c = np.zeros((d, d, d))
    for a in range(d):
        for b in range(d):
            comm = mul(basis[a], basis[b]) - mul(basis[b], basis[a])
            coef, *_ = np.linalg.lstsq(basis.T, comm, rcond=None)
            if np.max(np.abs(basis.T @ coef - comm)) > 1e-12:
                raise AlgebraError("basis does not close under the commutator")
            c[:, a, b] = coef
    return StructureConstants(c, name=name)


def su2() -> StructureConstants:
    """su(2) on the basis (i, j, k) of imaginary quaternions: [i, j] = 2k."""
    return structure_constants_from_commutators(np.eye(4)[1:], qmul, name="su2")


def bracket(sc: StructureConstants, xi: ArrayLike, eta: ArrayLike) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if xi.shape[-1] != sc.dim or eta.shape[-1] != sc.dim:
        raise AlgebraError(f"expected vectors of length {sc.dim}")
    return np.einsum("cab,...a,...b->...c", sc.c, xi, eta)


def ad_star_matrix(sc: StructureConstants, beta: ArrayLike, zeta: ArrayLike) -> np.ndarray:
    """beta^{-1} ad_zeta^T beta, the beta-adjoint of ad_zeta."""
    beta = np.asarray(beta, dtype=float)
    ad = sc.ad(zeta)
    try:
        return np.linalg.solve(beta, np.swapaxes(ad, -1, -2) @ beta)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular fiber metric in ad_star") from exc


def ad_star(sc: StructureConstants, beta: ArrayLike, zeta: ArrayLike, xi: ArrayLike) -> np.ndarray:
    """ad*_zeta(xi), defined by beta(ad*_zeta xi, eta) = beta(xi, [zeta, eta])."""
    m = ad_star_matrix(sc, beta, zeta)
    return np.einsum("...cb,...b->...c", m, np.asarray(xi, dtype=float))


def ad_invariance_defect(sc: StructureConstants, beta: ArrayLike) -> float:
    """max |beta([x, y], z) + beta(y, [x, z])| over basis triples."""
    beta = np.asarray(beta, dtype=float)
    # beta_{cd} C^c_{ab}: defect[a, b, e] = beta(ad_a e_b, e_e) + beta(e_b, ad_a e_e)
    t = np.einsum("cab,ce->abe", sc.c, beta)
    defect = t + np.transpose(t, (0, 2, 1))
    return float(np.max(np.abs(defect), initial=0.0))


def is_ad_invariant(sc: StructureConstants, beta: ArrayLike, tol: float = 1e-12) -> bool:
    return ad_invariance_defect(sc, beta) <= tol


# ---------------------------------------------------------------------------
# fiber metrics

@dataclass(frozen=True)
class AlgebraMetric:
    """Field x -> beta(x) of inner products on the Lie algebra.

    ``evaluator`` maps points of shape (..., m) to (..., d, d).  An optional
    ``derivative`` returns d beta / d x^mu with shape (..., m, d, d).
    """

    evaluator: Callable[[np.ndarray], np.ndarray]
    is_constant: bool = False
    derivative: Optional[Callable[[np.ndarray], np.ndarray]] = None
    tolerance: float = 1e-12
    samples: Iterable = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        for x in self.samples:
            self.check(x)

    def __call__(self, x: ArrayLike) -> np.ndarray:
        return np.asarray(self.evaluator(np.asarray(x, dtype=float)), dtype=float)

    def check(self, x: ArrayLike) -> None:
        b = self(x)
        if np.max(np.abs(b - np.swapaxes(b, -1, -2))) > self.tolerance:
            raise AlgebraError(f"fiber metric not symmetric at {np.asarray(x).tolist()}")
        if np.min(np.linalg.eigvalsh(b)) <= 0:
            raise AlgebraError(f"fiber metric not positive definite at {np.asarray(x).tolist()}")

    @classmethod
    def constant(cls, matrix: ArrayLike) -> "AlgebraMetric":
        mat = np.array(matrix, dtype=float)
        mat.setflags(write=False)
        d = mat.shape[0]

        def ev(x):
            x = np.asarray(x)
            return np.broadcast_to(mat, x.shape[:-1] + (d, d))

        def dev(x):
            x = np.asarray(x)
            return np.zeros(x.shape[:-1] + (x.shape[-1], d, d))

        metric = cls(ev, is_constant=True, derivative=dev)
        metric.check(np.zeros(1))
        return metric
