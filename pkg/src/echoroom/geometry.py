"""3-D primitives: planes, convex polygonal walls, rigid poses, reflections.

Points are plain ``numpy`` arrays of shape ``(3,)``; point sets are ``(n, 3)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    CoplanarMicrophonesError,
    DegeneratePolygonError,
    NonConvexError,
    NotCoplanarError,
)

TAU_COPLANAR = 1e-9
# offsets smaller than this count as "through the origin" for sign canonicalisation
_OFFSET_TIE = 1e-12


def as_point(p) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite point {a}")
    return a


def as_points(ps, n: Optional[int] = None) -> np.ndarray:
    a = np.asarray(ps, dtype=float)
    if a.ndim != 2 or a.shape[1] != 3:
        raise ValueError(f"expected an (n, 3) array, got shape {a.shape}")
    if n is not None and a.shape[0] != n:
        raise ValueError(f"expected {n} points, got {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("non-finite coordinates")
    return a


@dataclass(frozen=True)
class Plane:
    """The set ``{x : <normal, x> = offset}`` with a unit normal."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0.0:
            raise ValueError("plane normal must be a finite non-zero vector")
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"plane normal is not unit length (|n| = {norm!r})")
        if not np.isfinite(self.offset):
            raise ValueError("plane offset must be finite")
        n = n.copy()
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_normal_point(cls, normal, point) -> "Plane":
        """Canonical plane with the given (not necessarily unit) normal through ``point``."""
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, float(n @ as_point(point))).canonical()

    def canonical(self) -> "Plane":
        """Same plane, sign chosen so ``offset >= 0``; ties broken on the normal."""
        flip = False
        if self.offset < -_OFFSET_TIE:
            flip = True
        elif abs(self.offset) <= _OFFSET_TIE:
            # every unit vector has a component above 1/sqrt(3); noise cannot flip it
            big = self.normal[np.abs(self.normal) > 0.5]
            flip = bool(big[0] < 0)
        if flip:
            return Plane(-self.normal, -self.offset)
        return self

    def signed_distance(self, p) -> np.ndarray:
        return np.asarray(p, dtype=float) @ self.normal - self.offset

    def angle_to(self, other: "Plane") -> float:
        """Angle between the two planes' normals, ignoring orientation, in radians."""
        c = abs(float(self.normal @ other.normal))
        # the cross-product form stays accurate for tiny angles
        s = float(np.linalg.norm(np.cross(self.normal, other.normal)))
        return float(np.arctan2(s, c))

    def offset_difference(self, other: "Plane") -> float:
        sign = 1.0 if float(self.normal @ other.normal) >= 0 else -1.0
        return abs(self.offset - sign * other.offset)


def reflect_point(plane: Plane, p) -> np.ndarray:
    """Mirror image of ``p`` (or of each row of an ``(n, 3)`` array) across ``plane``."""
    p = np.asarray(p, dtype=float)
    dist = plane.signed_distance(p)
    return p - 2.0 * np.multiply.outer(dist, plane.normal)


def _polygon_frame(normal: np.ndarray):
    # any orthonormal basis (e1, e2) of the plane
    helper = np.eye(3)[int(np.argmin(np.abs(normal)))]
    e1 = np.cross(normal, helper)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(normal, e1)
    return e1, e2


def plane_from_polygon(vertices, tau: float = TAU_COPLANAR) -> Plane:
    """Best-fit plane of a planar convex polygon.

    Raises ``NotCoplanarError`` when a vertex is farther than ``tau`` from the
    fitted plane, ``DegeneratePolygonError`` for zero-area input and
    ``NonConvexError`` when the vertex loop turns both ways.
    """
    v = as_points(vertices)
    if len(v) < 3:
        raise DegeneratePolygonError("a wall needs at least 3 vertices")
    centroid = v.mean(axis=0)
    _, sv, vt = np.linalg.svd(v - centroid)
    if sv[1] <= tau:
        raise DegeneratePolygonError("polygon vertices are collinear")
    normal = vt[2]
    dist = np.abs((v - centroid) @ normal)
    if dist.max() > tau:
        raise NotCoplanarError(
            f"vertex {int(dist.argmax())} is {dist.max():.3g} m off the best-fit plane"
        )
    # orient the normal along the polygon's winding (Newell) before checking turns
    newell = np.cross(v, np.roll(v, -1, axis=0)).sum(axis=0)
    area = 0.5 * np.linalg.norm(newell)
    if area <= tau * max(1.0, np.ptp(v, axis=0).max()):
        raise DegeneratePolygonError("polygon has zero area")
    if normal @ newell < 0:
        normal = -normal
    edges = np.roll(v, -1, axis=0) - v
    turns = np.cross(edges, np.roll(edges, -1, axis=0)) @ normal
    scale = np.linalg.norm(edges, axis=1).max() ** 2
    if np.any(turns < -tau * scale):
        raise NonConvexError("polygon is not convex")
    return Plane(normal, float(normal @ centroid)).canonical()


@dataclass(frozen=True)
class Wall:
    """A finite convex planar polygon; ``plane`` is derived from the vertices."""

    vertices: np.ndarray
    plane: Plane = field(init=False)
    _basis: np.ndarray = field(init=False, repr=False, compare=False)
    _poly: np.ndarray = field(init=False, repr=False, compare=False)
    _edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        v = as_points(self.vertices).copy()
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "plane", plane_from_polygon(v))
        # 2-D frame of the polygon, reused by every containment query
        basis = np.stack(_polygon_frame(self.plane.normal), axis=1)
        poly = v @ basis
        edges = np.roll(poly, -1, axis=0) - poly
        object.__setattr__(self, "_basis", basis)
        object.__setattr__(self, "_poly", poly)
        object.__setattr__(self, "_edges", edges / np.linalg.norm(edges, axis=1)[:, None])

    def contains(self, x, tau_edge: float = 1e-9):
        """True if ``x`` (assumed on the plane) lies in the polygon, boundary included.

        ``x`` may be a point or an ``(n, 3)`` array (giving a boolean array).
        """
        x = np.asarray(x, dtype=float)
        rel = (x @ self._basis)[..., None, :] - self._poly
        # signed distance of x from each edge line
        dist = self._edges[:, 0] * rel[..., 1] - self._edges[:, 1] * rel[..., 0]
        inside = np.all(dist >= -tau_edge, axis=-1) | np.all(dist <= tau_edge, axis=-1)
        return bool(inside) if x.ndim == 1 else inside


def quaternion_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


@dataclass(frozen=True)
class Pose:
    """Rigid placement: unit quaternion ``(w, x, y, z)`` plus translation in meters."""

    quaternion: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=float).reshape(4).copy()
        t = as_point(self.translation).copy()
        if abs(np.linalg.norm(q) - 1.0) > 1e-12:
            raise ValueError(f"quaternion is not unit length (|q| = {np.linalg.norm(q)!r})")
        q.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @property
    def rotation(self) -> np.ndarray:
        return quaternion_to_matrix(self.quaternion)

    def matrix(self) -> np.ndarray:
        """The 4x4 affine matrix acting on homogeneous columns."""
        a = np.eye(4)
        a[:3, :3] = self.rotation
        a[:3, 3] = self.translation
        return a


def pose_apply(pose: Pose, p) -> np.ndarray:
    """``R p + t`` for a point or each row of an ``(n, 3)`` array."""
    p = np.asarray(p, dtype=float)
    return p @ pose.rotation.T + pose.translation


def random_pose(rng: np.random.Generator, box) -> Pose:
    """Haar-uniform rotation (Shoemake's quaternion method) and a translation
    uniform in the axis-aligned ``box = (lo, hi)``."""
    lo, hi = (as_point(b) for b in box)
    if np.any(hi < lo):
        raise ValueError("translation box is empty")
    u1, u2, u3 = rng.random(3)
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.array([
        b * np.cos(2 * np.pi * u3),
        a * np.sin(2 * np.pi * u2),
        a * np.cos(2 * np.pi * u2),
        b * np.sin(2 * np.pi * u3),
    ])
    q /= np.linalg.norm(q)
    t = lo + (hi - lo) * rng.random(3)
    return Pose(q, t)


def homogeneous_mic_matrix(mics) -> np.ndarray:
    """4x4 matrix whose columns are the microphones with a trailing row of ones."""
    m = as_points(mics, 4)
    return np.vstack([m.T, np.ones(4)])


def coplanarity_det(mics) -> float:
    return float(np.linalg.det(homogeneous_mic_matrix(mics)))


@dataclass(frozen=True)
class DroneBody:
    """Four microphones and an optional loudspeaker, in body coordinates."""

    mics: np.ndarray
    loudspeaker: Optional[np.ndarray] = None

    def __post_init__(self):
        m = as_points(self.mics, 4).copy()
        m.setflags(write=False)
        object.__setattr__(self, "mics", m)
        if abs(coplanarity_det(m)) <= TAU_COPLANAR:
            raise CoplanarMicrophonesError("microphones are coplanar (det M = 0)")
        if self.loudspeaker is not None:
            ls = as_point(self.loudspeaker).copy()
            ls.setflags(write=False)
            object.__setattr__(self, "loudspeaker", ls)

    def placed(self, pose: Pose):
        """World-frame microphones and loudspeaker (or ``None``)."""
        mics = pose_apply(pose, self.mics)
        ls = None if self.loudspeaker is None else pose_apply(pose, self.loudspeaker)
        return mics, ls
