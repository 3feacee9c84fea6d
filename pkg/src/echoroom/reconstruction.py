"""Wall detection from unlabeled first-order echo delays.

Delays become squared distances, candidate tuples (one echo per microphone)
are pruned with triangle inequalities and accepted when the Cayley-Menger
relation vanishes (``detect_walls``) or when the anchored Gram matrix has
numerical rank three (``detect_walls_rank``). Each accepted tuple yields a
mirror point, the wall plane, and four points on the wall.
"""
from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, replace
from typing import Iterator, Optional

import numpy as np

from . import cayley_menger as cm
from .errors import (
    CoplanarMicrophonesError,
    GeometryError,
    MicOnMirrorPlaneError,
    NegativeDelayError,
    NegativeEigenvalueError,
    SourceOnWallError,
)
from .geometry import TAU_COPLANAR, Plane, as_point, as_points, coplanarity_det
from .simulator import SPEED_OF_SOUND, EchoSet

log = logging.getLogger(__name__)

PRUNE_SLACK = 1e-7
TAU_DEGENERATE = 1e-9
TAU_MERGE = 1e-6
NOISE_K = 4.0


@dataclass(frozen=True)
class SquaredDistanceSets:
    """``values[i][k] = c^2 (t_ik - t0)^2`` for delay ``k`` of microphone ``i``."""

    values: tuple

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float).reshape(-1) for v in self.values)
        if len(vals) != 4:
            raise ValueError("need four distance lists")
        object.__setattr__(self, "values", vals)


@dataclass(frozen=True)
class DetectedWall:
    mirror: np.ndarray
    plane: Plane
    points: np.ndarray
    taus: np.ndarray
    tuple: Optional[tuple] = None
    residual: float = float("nan")
    consistency: float = float("nan")
    duplicates: int = 0


def squared_distances(echoes: EchoSet, c: float = SPEED_OF_SOUND,
                      t0: Optional[float] = None) -> SquaredDistanceSets:
    t0 = echoes.t0 if t0 is None else t0
    out = []
    for i, d in enumerate(echoes.delays):
        if np.any(d < t0):
            raise NegativeDelayError(f"microphone {i + 1} has a delay before the emission time")
        out.append((c * (d - t0)) ** 2)
    return SquaredDistanceSets(tuple(out))


def _mic_distances(mics: np.ndarray) -> np.ndarray:
    return np.sqrt(cm.squared_distance_matrix(mics))


def _default_slack(dsets: SquaredDistanceSets, mics: np.ndarray) -> float:
    radii = [np.sqrt(v).max() for v in dsets.values if len(v)]
    scale = max([_mic_distances(mics).max(), *radii])
    return PRUNE_SLACK * scale


def candidate_index_array(dsets: SquaredDistanceSets, mics,
                          slack: Optional[float] = None) -> np.ndarray:
    """Index tuples ``(k1, k2, k3, k4)`` passing every pairwise triangle test,
    in lexicographic order, as an ``(n, 4)`` integer array."""
    mics = as_points(mics, 4)
    if any(len(v) == 0 for v in dsets.values):
        return np.zeros((0, 4), dtype=int)
    slack = _default_slack(dsets, mics) if slack is None else slack
    bound = _mic_distances(mics) + slack
    radii = [np.sqrt(v) for v in dsets.values]
    order = [np.argsort(r, kind="stable") for r in radii]
    sorted_r = [r[o].tolist() for r, o in zip(radii, order)]

    def window(j, chosen):
        # indices of mic j's echoes compatible with every already chosen radius
        lo = max(r - bound[i, j] for i, r in chosen)
        hi = min(r + bound[i, j] for i, r in chosen)
        if lo > hi:
            return []
        a = bisect.bisect_left(sorted_r[j], lo)
        b = bisect.bisect_right(sorted_r[j], hi)
        return order[j][a:b]

    out = []
    for k1 in range(len(radii[0])):
        c1 = [(0, radii[0][k1])]
        for k2 in window(1, c1):
            c2 = c1 + [(1, radii[1][k2])]
            for k3 in window(2, c2):
                c3 = c2 + [(2, radii[2][k3])]
                for k4 in window(3, c3):
                    out.append((k1, k2, k3, k4))
    arr = np.array(sorted(out), dtype=int).reshape(-1, 4)
    return arr


def candidate_tuples(dsets: SquaredDistanceSets, mics,
                     slack: Optional[float] = None) -> Iterator[tuple]:
    """Yield ``(indices, (d1, d2, d3, d4))`` for every tuple surviving the pruning."""
    for idx in candidate_index_array(dsets, mics, slack):
        yield tuple(int(k) for k in idx), tuple(float(dsets.values[i][k]) for i, k in enumerate(idx))


def _gather(dsets: SquaredDistanceSets, idx: np.ndarray) -> np.ndarray:
    return np.stack([dsets.values[i][idx[:, i]] for i in range(4)], axis=1)


def _check_mics(mics: np.ndarray):
    if abs(coplanarity_det(mics)) <= TAU_COPLANAR:
        raise CoplanarMicrophonesError("microphones are coplanar (det M = 0)")


def recover_mirror_point(mics, d) -> np.ndarray:
    """Point whose squared distances to the microphones are ``d``.

    Linear formula ``s = 1/2 * Mt (|m_i|^2 - d_i)`` with ``Mt`` the upper 3x4
    block of ``M^-T``. Accepts ``d`` of shape ``(4,)`` or ``(n, 4)``. For
    inconsistent ``d`` the result is still defined; see ``consistency_residual``.
    """
    mics = as_points(mics, 4)
    _check_mics(mics)
    d = np.asarray(d, dtype=float)
    single = d.ndim == 1
    d = np.atleast_2d(d)
    # the formula is translation covariant; centring the mics improves conditioning
    centre = mics.mean(axis=0)
    m = mics - centre
    rhs = (np.einsum("ij,ij->i", m, m)[:, None] - d.T)
    y = np.linalg.solve(np.vstack([m.T, np.ones(4)]).T, rhs)
    s = 0.5 * y[:3].T + centre
    return s[0] if single else s


def consistency_residual(mics, s, d) -> float:
    """``max_i | |s - m_i|^2 - d_i | / scale`` with scale the largest ``d_i`` (or 1)."""
    mics = as_points(mics, 4)
    d = np.asarray(d, dtype=float)
    got = np.sum((mics - as_point(s)) ** 2, axis=1)
    return float(np.max(np.abs(got - d)) / max(1.0, float(np.max(np.abs(d)))))


def _wall_geometry(mics: np.ndarray, L: np.ndarray, s: np.ndarray):
    """Batched core of ``recover_wall``; ``s`` has shape ``(n, 3)``.

    Returns ``(taus, points, problems)`` where ``problems[j]`` is ``None`` or
    the exception describing why row ``j`` has no wall.
    """
    v = s - L
    dist2 = np.einsum("ij,ij->i", v, v)
    rel = s[:, None, :] - mics[None, :, :]
    den = 2.0 * np.einsum("nij,nj->ni", rel, v)
    lens = np.linalg.norm(rel, axis=2)
    problems = [None] * len(s)
    for j in np.flatnonzero(np.sqrt(dist2) <= TAU_DEGENERATE):
        problems[j] = SourceOnWallError("mirror point coincides with the loudspeaker")
    flat = np.any(np.abs(den) <= 1e-12 * 2.0 * np.sqrt(dist2)[:, None] * lens, axis=1)
    for j in np.flatnonzero(flat):
        if problems[j] is None:
            problems[j] = MicOnMirrorPlaneError("a microphone lies on a plane through s orthogonal to s - L")
    with np.errstate(divide="ignore", invalid="ignore"):
        taus = dist2[:, None] / den
    points = (1.0 - taus)[:, :, None] * s[:, None, :] + taus[:, :, None] * mics[None, :, :]
    return taus, points, problems


def recover_wall(mics, L, s) -> DetectedWall:
    """Plane bisecting ``L`` and its mirror point ``s`` plus the four points where
    the segments ``s -> m_i`` cross it."""
    mics = as_points(mics, 4)
    L, s = as_point(L), as_point(s)
    taus, points, problems = _wall_geometry(mics, L, s[None, :])
    if problems[0] is not None:
        raise problems[0]
    plane = Plane.from_normal_point(s - L, 0.5 * (s + L))
    return DetectedWall(mirror=s, plane=plane, points=points[0], taus=taus[0])


def _assemble(mics, L, idx, mirrors, u, residuals, diagnostics) -> list[DetectedWall]:
    """DetectedWall records for accepted tuples, skipping degenerate ones."""
    L = as_point(L)
    taus, points, problems = _wall_geometry(mics, L, mirrors)
    got = np.einsum("nij,nij->ni", mirrors[:, None, :] - mics, mirrors[:, None, :] - mics)
    consistency = np.max(np.abs(got - u), axis=1) / np.maximum(1.0, np.max(np.abs(u), axis=1))
    walls = []
    for j, key in enumerate(idx):
        key = tuple(int(x) for x in key)
        if problems[j] is not None:
            _diag(diagnostics, key, f"{type(problems[j]).__name__}: {problems[j]}")
            continue
        s = mirrors[j]
        walls.append(DetectedWall(mirror=s, plane=Plane.from_normal_point(s - L, 0.5 * (s + L)),
                                  points=points[j], taus=taus[j], tuple=key,
                                  residual=float(residuals[j]), consistency=float(consistency[j])))
    return walls


def noise_tolerance(ev: cm.CMEvaluator, u: np.ndarray, c: float, sigma_t: float,
                    k: float = NOISE_K) -> np.ndarray:
    """First-order bound on ``|eval_f_normalized|`` caused by delay jitter ``sigma_t``.

    ``eval_f`` has degree at most two in each ``u_j`` taken singly, so the
    central difference below is its exact partial derivative.
    """
    u = np.atleast_2d(u)
    if sigma_t == 0:
        return np.zeros(len(u))
    scale = cm.normalization_scale(ev, u)
    h = 1e-3 * scale
    grad = np.empty_like(u)
    for j in range(4):
        e = np.zeros(4)
        e[j] = 1.0
        up = cm.eval_f(ev, u + h[:, None] * e)
        dn = cm.eval_f(ev, u - h[:, None] * e)
        grad[:, j] = (up - dn) / (2.0 * h)
    du = 2.0 * c * np.sqrt(np.clip(u, 0, None)) * sigma_t
    return k * np.sum(np.abs(grad) * du, axis=1) / scale ** 4


def _diag(diagnostics, idx, reason):
    log.debug("skipping tuple %s: %s", idx, reason)
    if diagnostics is not None:
        diagnostics.append({"tuple": [int(x) for x in idx], "reason": reason})


def detect_walls(echoes: EchoSet, mics, L, c: float = SPEED_OF_SOUND,
                 t0: Optional[float] = None, eps_sort: float = cm.EPS_SORT,
                 sigma_t: float = 0.0, diagnostics: Optional[list] = None) -> list[DetectedWall]:
    """Cayley-Menger echo sorting.

    A tuple is accepted when ``|eval_f_normalized| <= eps_sort`` (widened by
    ``noise_tolerance`` when ``sigma_t > 0``). Tuples hitting a degeneracy are
    skipped and reported in ``diagnostics`` rather than aborting the run.
    """
    mics = as_points(mics, 4)
    _check_mics(mics)
    dsets = squared_distances(echoes, c, t0)
    idx = candidate_index_array(dsets, mics)
    if len(idx) == 0:
        return []
    ev = cm.CMEvaluator.from_mics(mics)
    u = _gather(dsets, idx)
    f = cm.eval_f_normalized(ev, u)
    tol = eps_sort + noise_tolerance(ev, u, c, sigma_t)
    keep = np.flatnonzero(np.abs(f) <= tol)
    if len(keep) == 0:
        return []
    mirrors = recover_mirror_point(mics, u[keep])
    return _assemble(mics, L, idx[keep], mirrors, u[keep], f[keep], diagnostics)


def mirror_from_embedding(mics, d, anchor: int = 3, rank_tol: float = cm.RANK_TOL,
                          delta: Optional[np.ndarray] = None) -> np.ndarray:
    """Mirror point via the rank-3 Gram embedding and rotation alignment.

    ``delta`` may be passed when already built from ``d``.
    """
    mics = as_points(mics, 4)
    if delta is None:
        delta = cm.build_delta(cm.CMEvaluator.from_mics(mics), np.asarray(d, dtype=float), anchor=anchor)
    pts = cm.embed_from_delta(delta, rank_tol)
    others = [k for k in range(4) if k != anchor]
    known = mics[others] - mics[anchor]
    rot = cm.nearest_orthogonal(cm.align_rotation(pts[1:], known))
    return mics[anchor] + rot.T @ pts[0]


def detect_walls_rank(echoes: EchoSet, mics, L, c: float = SPEED_OF_SOUND,
                      t0: Optional[float] = None, rank_tol: float = cm.RANK_TOL,
                      anchor: int = 3, diagnostics: Optional[list] = None) -> list[DetectedWall]:
    """Rank criterion: accept when the smallest eigenvalue of the anchored Gram
    matrix is at most ``rank_tol * trace``; the mirror point comes from the
    clamped eigen-embedding instead of the linear formula."""
    mics = as_points(mics, 4)
    _check_mics(mics)
    dsets = squared_distances(echoes, c, t0)
    idx = candidate_index_array(dsets, mics)
    if len(idx) == 0:
        return []
    ev = cm.CMEvaluator.from_mics(mics)
    u = _gather(dsets, idx)
    # |lambda_4| / trace is scale free, no normalisation needed
    deltas = cm.build_delta(ev, u, anchor=anchor)
    ratio = cm.fourth_eigenvalue_ratio(deltas)
    keep = np.flatnonzero(ratio <= rank_tol)
    if len(keep) == 0:
        return []
    mirrors, ok = [], []
    for j in keep:
        try:
            mirrors.append(mirror_from_embedding(mics, u[j], anchor, rank_tol, delta=deltas[j]))
            ok.append(j)
        except NegativeEigenvalueError as exc:
            _diag(diagnostics, idx[j], f"rejected: {exc}")
        except GeometryError as exc:
            _diag(diagnostics, idx[j], f"{type(exc).__name__}: {exc}")
    if not ok:
        return []
    ok = np.array(ok)
    return _assemble(mics, L, idx[ok], np.array(mirrors), u[ok], cm.eval_f_normalized(ev, u[ok]), diagnostics)


def localize_loudspeaker(direct_delays, mics, c: float = SPEED_OF_SOUND,
                         t0: float = 0.0) -> np.ndarray:
    """Loudspeaker position from the direct-path arrival at each microphone."""
    t = np.asarray(direct_delays, dtype=float).reshape(4)
    if np.any(t < t0):
        raise NegativeDelayError("direct-path delay before the emission time")
    d = (c * (t - t0)) ** 2
    L = recover_mirror_point(mics, d)
    res = consistency_residual(mics, L, d)
    if res > 1e-6:
        log.warning("direct-path distances are inconsistent (residual %.3g)", res)
    return L


def dedupe_walls(walls: list[DetectedWall], tau_merge: float = TAU_MERGE) -> list[DetectedWall]:
    """Merge detections whose mirror points agree within ``tau_merge`` meters.

    Each cluster keeps its lowest-residual member; clusters are ordered by the
    smallest tuple they contain.
    """
    keyed = sorted(walls, key=lambda w: w.tuple if w.tuple is not None else ())
    clusters: list[list[DetectedWall]] = []
    for w in keyed:
        for cl in clusters:
            if np.linalg.norm(cl[0].mirror - w.mirror) <= tau_merge:
                cl.append(w)
                break
        else:
            clusters.append([w])
    out = []
    for cl in clusters:
        best = min(cl, key=lambda w: abs(w.residual) if np.isfinite(w.residual) else np.inf)
        out.append(replace(best, duplicates=best.duplicates + len(cl) - 1))
    return out
