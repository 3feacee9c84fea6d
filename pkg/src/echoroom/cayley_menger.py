"""Cayley-Menger relation, the anchored Gram matrix, and EDM utilities.

Sign conventions (checked against the standard-basis closed form in the tests):

* ``eval_f`` is ``det`` of the bordered 6x6 matrix and equals
  ``4(u2-u1-1)^2 + 4(u3-u1-1)^2 + 4(u4-u1-1)^2 - 16 u1`` for microphones at the
  origin and the standard basis vectors (sign +1).
* ``det(build_delta(ev, u)) == -eval_f(ev, u)`` for every input.

Functions taking ``u`` accept a single 4-vector or a stack of shape ``(n, 4)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllZeroInputError, NegativeEigenvalueError, SingularKnownMatrixError
from .geometry import as_points

EPS_SORT = 1e-9
RANK_TOL = 1e-8
DELTA_SIGN = -1.0


def squared_distance_matrix(points) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass(frozen=True)
class CMEvaluator:
    """Squared microphone distances ``D[i, j]`` (4x4, m^2)."""

    D: np.ndarray

    def __post_init__(self):
        d = np.array(self.D, dtype=float)
        if d.shape != (4, 4):
            raise ValueError(f"D must be 4x4, got {d.shape}")
        if np.abs(d - d.T).max() > 1e-12 * max(1.0, np.abs(d).max()):
            raise ValueError("D must be symmetric")
        if np.any(np.diag(d) != 0) or np.any(d < 0):
            raise ValueError("D must have a zero diagonal and non-negative entries")
        d.setflags(write=False)
        object.__setattr__(self, "D", d)

    @classmethod
    def from_mics(cls, mics) -> "CMEvaluator":
        return cls(squared_distance_matrix(as_points(mics, 4)))


def _as_u(u) -> tuple[np.ndarray, bool]:
    a = np.asarray(u, dtype=float)
    single = a.ndim == 1
    a = np.atleast_2d(a)
    if a.shape[-1] != 4:
        raise ValueError(f"u must have 4 entries per row, got shape {a.shape}")
    return a, single


def build_cm_matrix(ev: CMEvaluator, u) -> np.ndarray:
    """Bordered 6x6 Cayley-Menger matrix (or stack of them)."""
    uu, single = _as_u(u)
    n = len(uu)
    a = np.zeros((n, 6, 6))
    a[:, 0, 1:5] = uu
    a[:, 1:5, 0] = uu
    a[:, 1:5, 1:5] = ev.D
    a[:, 1:5, 5] = 1.0
    a[:, 5, 1:5] = 1.0
    a[:, 0, 5] = a[:, 5, 0] = 1.0
    return a[0] if single else a


def eval_f(ev: CMEvaluator, u):
    """Determinant of the bordered matrix; zero for genuine squared distances."""
    _, single = _as_u(u)
    det = np.linalg.det(build_cm_matrix(ev, np.atleast_2d(u)))
    return float(det[0]) if single else det


def normalization_scale(ev: CMEvaluator, u) -> np.ndarray:
    """Mean of the ten pairwise squared distances among mics and the virtual point."""
    uu, _ = _as_u(u)
    d_sum = ev.D[np.triu_indices(4, 1)].sum()
    return (uu.sum(axis=1) + d_sum) / 10.0


def eval_f_normalized(ev: CMEvaluator, u):
    """``eval_f`` with every squared distance divided by their mean (dimensionless)."""
    uu, single = _as_u(u)
    scale = normalization_scale(ev, uu)
    if np.any(scale <= 0):
        raise AllZeroInputError("all squared distances are zero")
    a = build_cm_matrix(ev, uu)
    a[:, :5, :5] /= scale[:, None, None]
    det = np.linalg.det(a)
    return float(det[0]) if single else det


def build_delta(ev: CMEvaluator, u, anchor: int = 3) -> np.ndarray:
    """Anchored Gram-type matrix ``d_in + d_jn - d_ij`` over (s, m_a, m_b, m_c).

    Rows/cols are the virtual point followed by the three non-anchor
    microphones in index order; ``anchor`` is 0-based (default: mic 4).
    """
    uu, single = _as_u(u)
    n = len(uu)
    full = np.zeros((n, 5, 5))
    full[:, 0, 1:] = uu
    full[:, 1:, 0] = uu
    full[:, 1:, 1:] = ev.D
    a = anchor + 1
    order = [0] + [k for k in range(1, 5) if k != a]
    to_anchor = full[:, order, a]
    sub = full[:, order][:, :, order]
    delta = to_anchor[:, :, None] + to_anchor[:, None, :] - sub
    return delta[0] if single else delta


def sorted_eigh(m):
    """Eigenvalues in descending order with matching eigenvector columns."""
    w, v = np.linalg.eigh(m)
    return w[..., ::-1], v[..., ::-1]


def fourth_eigenvalue_ratio(delta) -> np.ndarray:
    """``|lambda_4| / trace`` for each 4x4 matrix (the rank-3 residual)."""
    w = np.linalg.eigvalsh(delta)
    tr = np.trace(delta, axis1=-2, axis2=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # eigvalsh is ascending: the candidate null direction is the smallest in magnitude
        lam4 = np.min(np.abs(w), axis=-1)
        return np.where(tr > 0, lam4 / np.where(tr > 0, tr, 1.0), np.where(lam4 > 0, np.inf, 0.0))


def embed_from_delta(delta, rank_tol: float = RANK_TOL) -> np.ndarray:
    """Points ``p_0..p_3`` (rows) with ``2 p_i . p_j ~= delta[i, j]``.

    Keeps the three largest eigenvalues and drops the rest (the rank-3
    projection). Raises ``NegativeEigenvalueError`` if an eigenvalue is below
    ``-rank_tol * trace``.
    """
    d = np.asarray(delta, dtype=float)
    if d.shape != (4, 4) or np.abs(d - d.T).max() > 1e-12 * max(1.0, np.abs(d).max()):
        raise ValueError("delta must be a symmetric 4x4 matrix")
    w, v = sorted_eigh(0.5 * (d + d.T))
    tol = rank_tol * max(float(np.trace(d)), 0.0)
    if w[-1] < -tol:
        raise NegativeEigenvalueError(f"delta is not positive semidefinite (eigenvalue {w[-1]:.3g})")
    lam = np.clip(w[:3], 0.0, None)
    return v[:, :3] * np.sqrt(lam / 2.0)


def align_rotation(primed, known) -> np.ndarray:
    """Linear map taking the known difference vectors onto the primed ones.

    Both inputs hold three vectors as rows (``m_i - m_4``); the result is
    ``P' K^{-1}`` with the vectors as columns. For congruent inputs it is
    orthogonal; its determinant is -1 when the primed set is mirrored.
    """
    p = np.asarray(primed, dtype=float).reshape(3, 3).T
    k = np.asarray(known, dtype=float).reshape(3, 3).T
    u, sv, vt = np.linalg.svd(k)
    if not sv[2] > 1e-12 * sv[0]:
        raise SingularKnownMatrixError("known vectors are (nearly) linearly dependent")
    return p @ (vt.T / sv) @ u.T


def nearest_orthogonal(m) -> np.ndarray:
    """Closest orthogonal matrix in Frobenius norm, keeping the sign of ``det m``."""
    u, _, vt = np.linalg.svd(np.asarray(m, dtype=float))
    return u @ vt


def mds_center(edm) -> np.ndarray:
    """Double-centred inner-product matrix ``-B D B``."""
    d = np.asarray(edm, dtype=float)
    n = d.shape[0]
    if d.shape != (n, n):
        raise ValueError("EDM must be square")
    b = np.eye(n) - np.full((n, n), 1.0 / n)
    return -b @ d @ b
