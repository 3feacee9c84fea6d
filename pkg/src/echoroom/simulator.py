"""First-order image-source forward model for four rigidly mounted microphones."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence, Union

import numpy as np

from .errors import DegenerateSourceError, MissingLoudspeakerError
from .geometry import TAU_COPLANAR, DroneBody, Pose, Wall, as_point, reflect_point

SPEED_OF_SOUND = 343.0
TAU_EDGE = 1e-9

Audibility = Literal["polygon", "plane"]


@dataclass(frozen=True)
class FixedSource:
    position: np.ndarray

    def __post_init__(self):
        p = as_point(self.position).copy()
        p.setflags(write=False)
        object.__setattr__(self, "position", p)


@dataclass(frozen=True)
class DroneSource:
    """The loudspeaker rides on the drone (``DroneBody.loudspeaker``)."""


@dataclass(frozen=True)
class Scene:
    walls: tuple
    source: Union[FixedSource, DroneSource] = field(default_factory=DroneSource)
    audibility: Audibility = "polygon"
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        walls = tuple(self.walls)
        if not walls:
            raise ValueError("a scene needs at least one wall")
        if not all(isinstance(w, Wall) for w in walls):
            raise TypeError("walls must be Wall instances")
        if self.audibility not in ("polygon", "plane"):
            raise ValueError(f"unknown audibility mode {self.audibility!r}")
        if not self.speed_of_sound > 0:
            raise ValueError("speed of sound must be positive")
        object.__setattr__(self, "walls", walls)
        if isinstance(self.source, FixedSource):
            _check_source(walls, self.source.position)


def _check_source(walls, source):
    for k, w in enumerate(walls):
        if abs(w.plane.signed_distance(source)) <= TAU_COPLANAR:
            raise DegenerateSourceError(f"loudspeaker lies on the plane of wall {k}")


@dataclass(frozen=True)
class EchoLabel:
    wall: int
    mirror: np.ndarray


@dataclass(frozen=True)
class EchoSet:
    """Per-microphone first-order echo arrival times.

    ``delays[i]`` is sorted ascending. Coincident arrivals from different walls
    are kept as separate entries. ``labels[i][k]`` is the ground truth for
    ``delays[i][k]``; reconstruction never reads it.
    """

    delays: tuple
    t0: float = 0.0
    labels: Optional[tuple] = None
    direct: Optional[np.ndarray] = None

    def __post_init__(self):
        delays = tuple(np.asarray(d, dtype=float).reshape(-1).copy() for d in self.delays)
        if len(delays) != 4:
            raise ValueError("an EchoSet holds exactly four delay lists")
        for d in delays:
            if np.any(np.diff(d) < 0):
                raise ValueError("delay lists must be sorted")
            d.setflags(write=False)
        object.__setattr__(self, "delays", delays)
        if self.labels is not None:
            labels = tuple(tuple(lab) for lab in self.labels)
            if [len(x) for x in labels] != [len(d) for d in delays]:
                raise ValueError("labels must match delays one to one")
            object.__setattr__(self, "labels", labels)
        if self.direct is not None:
            object.__setattr__(self, "direct", np.asarray(self.direct, dtype=float).reshape(4))

    def counts(self) -> list[int]:
        return [len(d) for d in self.delays]


def mirror_point(wall: Wall, source) -> np.ndarray:
    return reflect_point(wall.plane, as_point(source))


def specular_visible(wall: Wall, source, mic, audibility: Audibility = "polygon",
                     tau_edge: float = TAU_EDGE):
    """Whether ``mic`` hears the first-order reflection of ``source`` off ``wall``.

    Source and mic must be strictly on the same side of the wall's plane; in
    polygon mode the specular reflection point must also lie in the polygon.
    ``mic`` may be an ``(n, 3)`` array, giving one flag per row.
    """
    source = as_point(source)
    mic = np.asarray(mic, dtype=float)
    n, off = wall.plane.normal, wall.plane.offset
    ds = float(source @ n) - off
    dm = mic @ n - off
    ok = (abs(ds) > TAU_COPLANAR) & (np.abs(dm) > TAU_COPLANAR) & ((dm > 0) == (ds > 0))
    if audibility == "polygon" and np.any(ok):
        s = source - 2.0 * ds * n
        # s sits at -ds, mic at dm: the segment crosses the plane at fraction ds/(ds+dm)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = ds / (ds + dm)
        x = s + (mic - s) * np.expand_dims(frac, -1)
        ok = ok & wall.contains(x, tau_edge)
    return bool(ok) if mic.ndim == 1 else ok


def resolve_source(scene: Scene, body: DroneBody, pose: Pose) -> np.ndarray:
    if isinstance(scene.source, FixedSource):
        return scene.source.position
    if body.loudspeaker is None:
        raise MissingLoudspeakerError("drone-mounted source requested but the body has no loudspeaker")
    _, ls = body.placed(pose)
    _check_source(scene.walls, ls)
    return ls


def direct_path_delays(scene: Scene, body: DroneBody, pose: Pose,
                       c: Optional[float] = None, t0: float = 0.0) -> np.ndarray:
    c = scene.speed_of_sound if c is None else c
    src = resolve_source(scene, body, pose)
    mics, _ = body.placed(pose)
    return t0 + np.linalg.norm(mics - src, axis=1) / c


def simulate_echoes(scene: Scene, body: DroneBody, pose: Pose,
                    c: Optional[float] = None, t0: float = 0.0) -> EchoSet:
    c = scene.speed_of_sound if c is None else c
    src = resolve_source(scene, body, pose)
    mics, _ = body.placed(pose)
    mirrors = np.array([mirror_point(w, src) for w in scene.walls])
    visible = np.array([specular_visible(w, src, mics, scene.audibility) for w in scene.walls])
    times = t0 + np.linalg.norm(mirrors[:, None, :] - mics[None, :, :], axis=2) / c
    delays, labels = [], []
    for i in range(len(mics)):
        heard = sorted((float(times[k, i]), int(k)) for k in np.flatnonzero(visible[:, i]))
        delays.append([t for t, _ in heard])
        labels.append([EchoLabel(k, mirrors[k]) for _, k in heard])
    direct = t0 + np.linalg.norm(mics - src, axis=1) / c
    return EchoSet(tuple(delays), t0=t0, labels=tuple(labels), direct=direct)


@dataclass(frozen=True)
class NoiseModel:
    sigma_t: float
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.sigma_t >= 0:
            raise ValueError("sigma_t must be non-negative")


def add_noise(echoes: EchoSet, noise: NoiseModel,
              rng: Optional[np.random.Generator] = None) -> EchoSet:
    """Independent Gaussian jitter on every echo delay (direct path included)."""
    if noise.sigma_t == 0:
        return echoes
    rng = np.random.default_rng(noise.seed) if rng is None else rng
    delays, labels = [], []
    for i, d in enumerate(echoes.delays):
        noisy = d + rng.normal(0.0, noise.sigma_t, size=d.shape)
        order = np.argsort(noisy, kind="stable")
        delays.append(noisy[order])
        if echoes.labels is not None:
            labels.append([echoes.labels[i][k] for k in order])
    direct = None
    if echoes.direct is not None:
        direct = echoes.direct + rng.normal(0.0, noise.sigma_t, size=4)
    return EchoSet(tuple(delays), t0=echoes.t0,
                   labels=tuple(labels) if echoes.labels is not None else None,
                   direct=direct)


def box_room(lo: Sequence[float], hi: Sequence[float]) -> list[Wall]:
    """The six inward-facing faces of an axis-aligned box."""
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    corners = {
        "floor": [(x0, y0, z0), (x1, y0, z0), (x1, y1, z0), (x0, y1, z0)],
        "ceiling": [(x0, y0, z1), (x0, y1, z1), (x1, y1, z1), (x1, y0, z1)],
        "south": [(x0, y0, z0), (x0, y0, z1), (x1, y0, z1), (x1, y0, z0)],
        "north": [(x0, y1, z0), (x1, y1, z0), (x1, y1, z1), (x0, y1, z1)],
        "west": [(x0, y0, z0), (x0, y1, z0), (x0, y1, z1), (x0, y0, z1)],
        "east": [(x1, y0, z0), (x1, y0, z1), (x1, y1, z1), (x1, y1, z0)],
    }
    return [Wall(np.array(v, dtype=float)) for v in corners.values()]
