"""Monte-Carlo ghost-rate studies, the parallel-wall ghost construction, and
delay-noise sweeps."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import cayley_menger as cm
from .errors import EchoRoomError, GeometryError
from .geometry import DroneBody, Plane, Pose, Wall, random_pose
from .reconstruction import (
    DetectedWall,
    dedupe_walls,
    detect_walls,
    detect_walls_rank,
    recover_mirror_point,
    recover_wall,
    squared_distances,
)
from .simulator import (
    DroneSource,
    EchoSet,
    FixedSource,
    NoiseModel,
    Scene,
    add_noise,
    box_room,
    simulate_echoes,
)

log = logging.getLogger(__name__)

TAU_MATCH = 1e-6

ROOM_SIZE = (6.0, 5.0, 3.0)
DEFAULT_MICS = np.array([
    [0.5, 0.0, 0.0],
    [-0.25, 0.375, 0.05],
    [-0.125, -0.425, 0.125],
    [0.075, 0.05, 0.625],
])
DEFAULT_LOUDSPEAKER = np.array([0.025, -0.05, -0.25])


class ConstructionError(EchoRoomError):
    """A crafted scene failed its own self-checks."""


def default_room(source: str = "fixed") -> Scene:
    """6 x 5 x 3 m shoebox; ``source`` is ``"fixed"`` or ``"drone"``."""
    src = FixedSource(np.array([1.7, 2.3, 1.1])) if source == "fixed" else DroneSource()
    return Scene(tuple(box_room((0, 0, 0), ROOM_SIZE)), src)


def default_drone() -> DroneBody:
    return DroneBody(DEFAULT_MICS, DEFAULT_LOUDSPEAKER)


def scene_scale(scene: Scene) -> float:
    v = np.vstack([w.vertices for w in scene.walls])
    return float(np.linalg.norm(v.max(axis=0) - v.min(axis=0)))


def default_box(scene: Scene, body: DroneBody, margin: float = 0.1):
    """Bounding box of the walls, shrunk so the whole drone stays inside."""
    v = np.vstack([w.vertices for w in scene.walls])
    pts = body.mics if body.loudspeaker is None else np.vstack([body.mics, body.loudspeaker])
    r = float(np.linalg.norm(pts, axis=1).max()) + margin
    lo, hi = v.min(axis=0) + r, v.max(axis=0) - r
    if np.any(hi < lo):
        raise ValueError("the drone does not fit inside the walls' bounding box")
    return lo, hi


def config_digest(payload) -> str:
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def scene_payload(scene: Scene) -> dict:
    src = scene.source
    return {
        "walls": [{"vertices": w.vertices.tolist()} for w in scene.walls],
        "source": ({"mode": "fixed", "position": src.position.tolist()}
                   if isinstance(src, FixedSource) else {"mode": "drone"}),
        "speed_of_sound": scene.speed_of_sound,
        "audibility": scene.audibility,
    }


def body_payload(body: DroneBody, pose: Optional[Pose] = None) -> dict:
    out = {"mics": body.mics.tolist()}
    if body.loudspeaker is not None:
        out["loudspeaker"] = body.loudspeaker.tolist()
    if pose is not None:
        out["pose"] = {"quaternion": pose.quaternion.tolist(), "translation": pose.translation.tolist()}
    return out


def match_walls(detected: Sequence[DetectedWall], walls: Sequence[Wall], scale: float,
                tau: float = TAU_MATCH) -> list[Optional[int]]:
    """Index of the true wall each detection matches (or ``None`` for a ghost).

    A match needs the normals within ``tau`` radians and offsets within
    ``tau * scale`` meters.
    """
    out = []
    for d in detected:
        hit = None
        for k, w in enumerate(walls):
            if d.plane.angle_to(w.plane) <= tau and d.plane.offset_difference(w.plane) <= tau * scale:
                hit = k
                break
        out.append(hit)
    return out


def walls_heard_by_all(echoes: EchoSet) -> list[int]:
    sets = [{lab.wall for lab in labs} for labs in echoes.labels]
    return sorted(set.intersection(*sets))


def genuine_tuple(echoes: EchoSet, wall: int) -> tuple:
    return tuple(next(k for k, lab in enumerate(labs) if lab.wall == wall) for labs in echoes.labels)


@dataclass
class TrialReport:
    trial: int
    pose: Pose
    n_walls_true_heard: int = 0
    n_detected: int = 0
    n_ghosts: int = 0
    n_missed: int = 0
    degenerate: bool = False
    ghost_details: list = field(default_factory=list)
    normal_errors: list = field(default_factory=list)
    offset_errors: list = field(default_factory=list)
    max_residual: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pose"] = {"quaternion": self.pose.quaternion.tolist(),
                     "translation": self.pose.translation.tolist()}
        return d


@dataclass
class MonteCarloSummary:
    trials: int
    ghost_trial_count: int
    degenerate_trials: int
    missed_walls: int
    seed: Optional[int]
    mode: str
    method: str
    config_digest: str
    reports: list = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reports"] = [r.to_dict() for r in self.reports]
        return d


def run_trial(scene: Scene, body: DroneBody, pose: Pose, trial: int = 0, method: str = "cm",
              eps_sort: float = cm.EPS_SORT, rank_tol: float = cm.RANK_TOL,
              tau_match: float = TAU_MATCH) -> TrialReport:
    """Simulate one emission at ``pose``, detect walls, and score the result."""
    report = TrialReport(trial=trial, pose=pose)
    try:
        echoes = simulate_echoes(scene, body, pose)
        mics, ls = body.placed(pose)
        L = scene.source.position if isinstance(scene.source, FixedSource) else ls
        c = scene.speed_of_sound
        if method == "rank":
            found = detect_walls_rank(echoes, mics, L, c, rank_tol=rank_tol)
        else:
            found = detect_walls(echoes, mics, L, c, eps_sort=eps_sort)
    except GeometryError as exc:
        log.info("trial %d degenerate: %s", trial, exc)
        report.degenerate = True
        return report
    found = dedupe_walls(found)
    scale = scene_scale(scene)
    matches = match_walls(found, scene.walls, scale, tau_match)
    heard = walls_heard_by_all(echoes)
    report.n_walls_true_heard = len(heard)
    report.n_detected = len(found)
    report.n_ghosts = sum(m is None for m in matches)
    report.n_missed = len(set(heard) - {m for m in matches if m is not None})
    report.max_residual = max((abs(w.residual) for w in found), default=0.0)
    for w, m in zip(found, matches):
        if m is None:
            report.ghost_details.append({"tuple": list(w.tuple), "residual": w.residual,
                                         "mirror": w.mirror.tolist()})
        else:
            true = scene.walls[m].plane
            report.normal_errors.append(w.plane.angle_to(true))
            report.offset_errors.append(w.plane.offset_difference(true))
    return report


def monte_carlo(scene: Scene, body: DroneBody, trials: int, seed: Optional[int] = 0,
                box=None, mode: Optional[Literal["fixed", "drone"]] = None,
                method: str = "cm", keep_reports: bool = True) -> MonteCarloSummary:
    """Ghost counts over ``trials`` Haar-random poses.

    Trial ``i`` draws its pose from ``default_rng([seed, i])``, so any
    partition of the trials reproduces the same summary.
    """
    if mode == "drone":
        scene = replace(scene, source=DroneSource())
    elif mode == "fixed" and not isinstance(scene.source, FixedSource):
        raise ValueError("fixed mode needs a scene with a fixed source position")
    mode = "fixed" if isinstance(scene.source, FixedSource) else "drone"
    box = default_box(scene, body) if box is None else box
    digest = config_digest({"scene": scene_payload(scene), "body": body_payload(body),
                            "trials": trials, "seed": seed, "box": [np.asarray(b).tolist() for b in box],
                            "mode": mode, "method": method})
    summary = MonteCarloSummary(trials=trials, ghost_trial_count=0, degenerate_trials=0,
                                missed_walls=0, seed=seed, mode=mode, method=method,
                                config_digest=digest)
    for i in range(trials):
        rng = np.random.default_rng([seed or 0, i])
        rep = run_trial(scene, body, random_pose(rng, box), trial=i, method=method)
        summary.ghost_trial_count += rep.n_ghosts > 0
        summary.degenerate_trials += rep.degenerate
        summary.missed_walls += rep.n_missed
        if keep_reports:
            summary.reports.append(rep)
    return summary


@dataclass(frozen=True)
class GhostScene:
    scene: Scene
    body: DroneBody
    pose: Pose
    ghost_plane: Plane
    mic_wall_distances: np.ndarray
    real_walls: tuple  # indices of walls heard by all four microphones


def build_ghost_scene(perturb: float = 0.0) -> GhostScene:
    """Four parallel finite walls, each heard by exactly one microphone at a
    common distance, so their echoes mimic one nonexistent wall.

    Three microphones and walls follow the planar sketch (``z = 0``); the
    fourth pair sits off that plane. Two large walls heard by everyone are
    added as genuine detections. ``perturb`` shifts the first small wall along
    its normal, which should destroy the ghost.
    """
    L = np.array([7.0, 2.0, 0.0])
    h = 1.0
    mics = np.array([[4.0, 4.0, 0.0], [8.0, 5.0, 0.0], [10.0, 6.0, 0.0], [7.0, 5.5, 1.5]])
    normal = np.array([0.0, 1.0, 0.0])
    walls = []
    for i, m in enumerate(mics):
        y = m[1] + h + (perturb if i == 0 else 0.0)
        # specular point of L -> wall -> m on the plane y = const
        s = L.copy()
        s[1] = 2 * y - L[1]
        x = s + (m - s) * ((s[1] - y) / (s[1] - m[1]))
        hx, hz = 0.5, 0.4
        walls.append(Wall(np.array([
            [x[0] - hx, y, x[2] - hz], [x[0] - hx, y, x[2] + hz],
            [x[0] + hx, y, x[2] + hz], [x[0] + hx, y, x[2] - hz],
        ])))
    walls.append(Wall(np.array([[0, -5, -10], [0, 15, -10], [0, 15, 10], [0, -5, 10]], dtype=float)))
    walls.append(Wall(np.array([[-5, -5, -2.5], [20, -5, -2.5], [20, 15, -2.5], [-5, 15, -2.5]])))
    scene = Scene(tuple(walls), FixedSource(L))
    body = DroneBody(mics)
    pose = Pose.identity()
    ghost = Plane.from_normal_point(normal, L - h * normal)
    dists = np.array([abs(walls[i].plane.signed_distance(mics[i])) for i in range(4)])

    echoes = simulate_echoes(scene, body, pose)
    for i in range(4):
        heard = {lab.wall for lab in echoes.labels[i]} & {0, 1, 2, 3}
        if heard != {i}:
            raise ConstructionError(f"microphone {i + 1} hears small walls {sorted(heard)}, expected [{i}]")
    if perturb == 0.0 and np.ptp(dists) > 1e-12:
        raise ConstructionError("microphone-to-wall distances are not equal")
    return GhostScene(scene, body, pose, ghost, dists, tuple(walls_heard_by_all(echoes)))


def ghost_tuple_residual(g: GhostScene) -> float:
    """Normalised Cayley-Menger value of the (small-wall) ghost tuple."""
    echoes = simulate_echoes(g.scene, g.body, g.pose)
    d = squared_distances(echoes, g.scene.speed_of_sound)
    idx = [next(k for k, lab in enumerate(echoes.labels[i]) if lab.wall == i) for i in range(4)]
    u = np.array([d.values[i][k] for i, k in enumerate(idx)])
    return float(cm.eval_f_normalized(cm.CMEvaluator.from_mics(g.body.mics), u))


@dataclass
class SweepRow:
    sigma: float
    trials: int
    detection_rate: float
    median_normal_error: float
    median_offset_error: float
    median_lambda4: float


@dataclass
class SweepResult:
    rows: list
    spearman: float
    seed: Optional[int]

    def to_dict(self) -> dict:
        return asdict(self)


def noise_sweep(scene: Scene, body: DroneBody, pose: Pose, sigmas: Sequence[float],
                trials_per_sigma: int, seed: Optional[int] = 0, match_k: float = 20.0) -> SweepResult:
    """Reconstruction quality under Gaussian delay jitter.

    Per sigma: the fraction of walls heard by all four microphones that a
    noise-aware ``detect_walls`` recovers (normal within a sigma-scaled
    tolerance), and medians over genuine tuples of the plane errors and of the
    rank-3 residual ``|lambda_4| / trace``.
    """
    mics, ls = body.placed(pose)
    L = scene.source.position if isinstance(scene.source, FixedSource) else ls
    c = scene.speed_of_sound
    clean = simulate_echoes(scene, body, pose)
    heard = walls_heard_by_all(clean)
    ev = cm.CMEvaluator.from_mics(mics)
    aperture = float(np.sqrt(ev.D.max()))
    rows = []
    for si, sigma in enumerate(sigmas):
        tau = TAU_MATCH + match_k * c * sigma / aperture
        hits, nerr, oerr, lam = 0, [], [], []
        for t in range(trials_per_sigma):
            rng = np.random.default_rng([seed or 0, si, t])
            noisy = add_noise(clean, NoiseModel(sigma), rng)
            found = detect_walls(noisy, mics, L, c, sigma_t=sigma)
            dsets = squared_distances(noisy, c)
            for w in heard:
                true = scene.walls[w].plane
                if any(f.plane.angle_to(true) <= tau for f in found):
                    hits += 1
                key = genuine_tuple(noisy, w)
                u = np.array([dsets.values[i][k] for i, k in enumerate(key)])
                est = recover_wall(mics, L, recover_mirror_point(mics, u))
                nerr.append(est.plane.angle_to(true))
                oerr.append(est.plane.offset_difference(true))
                lam.append(float(cm.fourth_eigenvalue_ratio(cm.build_delta(ev, u))))
        n = max(1, trials_per_sigma * len(heard))
        rows.append(SweepRow(float(sigma), trials_per_sigma, hits / n,
                             float(np.median(nerr)) if nerr else float("nan"),
                             float(np.median(oerr)) if oerr else float("nan"),
                             float(np.median(lam)) if lam else float("nan")))
    if len(rows) >= 2:
        rho = spearmanr([r.sigma for r in rows], [r.median_normal_error for r in rows]).statistic
    else:
        rho = float("nan")
    return SweepResult(rows, float(rho), seed)
