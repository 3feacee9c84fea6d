"""``echoroom`` command line: simulate | reconstruct | montecarlo | ghost-demo.

Exit codes: 0 ok, 1 ghost-demo found no ghost, 2 bad input file or
arguments, 3 geometric invariant violated, 4 loudspeaker position
unresolvable, 5 crafted scene failed its self-checks.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from .. import cayley_menger as cm
from ..errors import GeometryError, MissingLoudspeakerError
from ..experiments import (
    ConstructionError,
    body_payload,
    build_ghost_scene,
    config_digest,
    default_box,
    default_drone,
    default_room,
    monte_carlo,
    scene_payload,
)
from ..reconstruction import (
    consistency_residual,
    dedupe_walls,
    detect_walls,
    detect_walls_rank,
    localize_loudspeaker,
    TAU_MERGE,
)
from ..simulator import NoiseModel, add_noise, simulate_echoes
from . import files
from .files import SchemaError

EXIT_OK, EXIT_NO_GHOST, EXIT_SCHEMA, EXIT_GEOMETRY, EXIT_SOURCE, EXIT_SELFCHECK = 0, 1, 2, 3, 4, 5

log = logging.getLogger("echoroom")

GHOST_MATCH_TOL = 1e-8


class SourceError(Exception):
    pass


def _emit(text: str, out: Optional[str]) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        files.write_atomic(out, text)


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg, file=sys.stderr if args.out is None else sys.stdout)


def _floats(text: str, n: int, what: str) -> np.ndarray:
    try:
        vals = np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers")
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what}: expected {n} comma-separated numbers")
    return vals


def cmd_simulate(args) -> int:
    scene = files.load_scene(args.scene)
    body, pose = files.load_drone(args.drone)
    c = scene.speed_of_sound
    echoes = simulate_echoes(scene, body, pose, c=c, t0=args.t0)
    echoes = add_noise(echoes, NoiseModel(args.sigma_t, args.seed))
    digest = config_digest({"scene": scene_payload(scene), "drone": body_payload(body, pose),
                            "sigma_t": args.sigma_t, "seed": args.seed, "t0": args.t0})
    doc = files.echoes_to_dict(echoes, c, args.with_truth,
                               files.metadata(args.seed, digest, sigma_t=args.sigma_t))
    _emit(files.dumps(doc), args.out)
    _say(args, f"simulated {sum(echoes.counts())} echoes {echoes.counts()} per microphone")
    return EXIT_OK


def _resolve_source(choice, echoes, doc, body, pose, mics, c):
    if not isinstance(choice, str):
        return np.asarray(choice, dtype=float), None
    if choice.startswith("fixed:"):
        return _floats(choice[len("fixed:"):], 3, "--source fixed"), None
    if choice == "drone":
        if body.loudspeaker is None:
            raise SourceError("--source drone but the drone file has no loudspeaker")
        return body.placed(pose)[1], None
    if choice == "auto":
        if echoes.direct is None:
            raise SourceError("--source auto needs direct-path delays in the echoes file")
        L = localize_loudspeaker(echoes.direct, mics, c, echoes.t0)
        d = (c * (echoes.direct - echoes.t0)) ** 2
        return L, consistency_residual(mics, L, d)
    raise SourceError(f"unknown --source {choice!r} (use fixed:x,y,z, auto or drone)")


def _ghost_flags(walls, echoes):
    if echoes.labels is None:
        return [None] * len(walls)
    out = []
    for w in walls:
        ids = {echoes.labels[i][k].wall for i, k in enumerate(w.tuple)}
        out.append(len(ids) != 1)
    return out


def reconstruct(echoes, doc, body, pose, source: str, method: str, epsilon: float,
                rank_tol: float, sigma_t: float, tau_merge: float):
    mics, _ = body.placed(pose)
    c = float(doc.get("speed_of_sound", 343.0))
    L, src_residual = _resolve_source(source, echoes, doc, body, pose, mics, c)
    skipped: list = []
    if method == "rank":
        found = detect_walls_rank(echoes, mics, L, c, rank_tol=rank_tol, diagnostics=skipped)
    else:
        found = detect_walls(echoes, mics, L, c, eps_sort=epsilon, sigma_t=sigma_t, diagnostics=skipped)
    raw = len(found)
    walls = dedupe_walls(found, tau_merge)
    entries = []
    for w, ghost in zip(walls, _ghost_flags(walls, echoes)):
        e = files.wall_to_dict(w)
        if ghost is not None:
            e["ghost"] = ghost
        entries.append(e)
    result = {
        "format": "echoroom.result/1",
        "source": np.asarray(L).tolist(),
        "walls": entries,
        "diagnostics": {
            "skipped": skipped,
            "accepted_tuples": raw,
            "collisions": sum(w.duplicates for w in walls),
            "source_residual": src_residual,
        },
    }
    return walls, result


def _print_table(args, walls, entries):
    if args.quiet:
        return
    stream = sys.stderr if args.out is None else sys.stdout
    print(f"{'#':>3}  {'normal':^32}  {'offset':>10}  {'residual':>10}  ghost", file=stream)
    for k, (w, e) in enumerate(zip(walls, entries)):
        n = " ".join(f"{x:+.6f}" for x in w.plane.normal)
        print(f"{k:>3}  {n:^32}  {w.plane.offset:>10.6f}  {w.residual:>10.2e}  {e.get('ghost', '-')}",
              file=stream)


def cmd_reconstruct(args) -> int:
    echoes, doc = files.load_echoes(args.echoes)
    body, pose = files.load_drone(args.drone)
    walls, result = reconstruct(echoes, doc, body, pose, args.source, args.method, args.epsilon,
                                args.rank_tol, args.sigma_t, args.tau_merge)
    digest = config_digest({"echoes": doc, "drone": body_payload(body, pose), "source": args.source,
                            "method": args.method, "epsilon": args.epsilon, "rank_tol": args.rank_tol,
                            "sigma_t": args.sigma_t, "tau_merge": args.tau_merge})
    result["metadata"] = files.metadata(args.seed, digest, method=args.method)
    _emit(files.dumps(result), args.out)
    _print_table(args, walls, result["walls"])
    return EXIT_OK


MC_COLUMNS = ["trial", "ghost_count", "detected", "heard", "max_residual"]


def cmd_montecarlo(args) -> int:
    scene = files.load_scene(args.scene) if args.scene else default_room()
    if args.drone:
        body, _ = files.load_drone(args.drone)
    else:
        body = default_drone()
    box = default_box(scene, body) if args.box is None else (args.box[:3], args.box[3:])
    summary = monte_carlo(scene, body, args.trials, seed=args.seed, box=box, mode=args.mode,
                          method=args.method)
    doc = summary.to_dict()
    reports = doc.pop("reports")
    doc["ghost_trials"] = [r for r in reports if r["n_ghosts"] > 0]
    doc["format"] = "echoroom.montecarlo/1"
    doc["metadata"] = files.metadata(args.seed, summary.config_digest)
    rows = [{"trial": r["trial"], "ghost_count": r["n_ghosts"], "detected": r["n_detected"],
             "heard": r["n_walls_true_heard"], "max_residual": repr(r["max_residual"])} for r in reports]
    if args.out is None:
        sys.stdout.write(files.dumps(doc))
    else:
        out = Path(args.out)
        files.write_atomic(out / "summary.json", files.dumps(doc))
        files.write_atomic(out / "trials.csv", files.csv_text(rows, MC_COLUMNS))
    _say(args, f"{summary.trials} trials, {summary.ghost_trial_count} with ghosts, "
               f"{summary.degenerate_trials} degenerate, {summary.missed_walls} missed walls")
    return EXIT_OK


def cmd_ghost_demo(args) -> int:
    g = build_ghost_scene(args.perturb)
    echoes = simulate_echoes(g.scene, g.body, g.pose)
    doc = files.echoes_to_dict(echoes, g.scene.speed_of_sound, with_truth=True)
    walls, result = reconstruct(echoes, doc, g.body, g.pose, g.scene.source.position, "cm",
                                args.epsilon, cm.RANK_TOL, 0.0, TAU_MERGE)
    found_ghost = False
    for e, w in zip(result["walls"], walls):
        e["matches_analytic_ghost"] = bool(w.plane.angle_to(g.ghost_plane) <= GHOST_MATCH_TOL
                                           and w.plane.offset_difference(g.ghost_plane) <= GHOST_MATCH_TOL)
        found_ghost |= e["matches_analytic_ghost"] and e.get("ghost", False)
    ghost_doc = {"normal": g.ghost_plane.normal.tolist(), "offset": g.ghost_plane.offset,
                 "mic_wall_distances": g.mic_wall_distances.tolist(), "perturb": args.perturb}
    result["metadata"] = files.metadata(args.seed, config_digest({"perturb": args.perturb,
                                                                  "epsilon": args.epsilon}))
    if args.out is not None:
        out = Path(args.out)
        files.write_atomic(out / "scene.json", files.dumps(scene_payload(g.scene)))
        files.write_atomic(out / "drone.json", files.dumps(body_payload(g.body, g.pose)))
        files.write_atomic(out / "ghost_plane.json", files.dumps(ghost_doc))
        files.write_atomic(out / "result.json", files.dumps(result))
    else:
        sys.stdout.write(files.dumps({"ghost_plane": ghost_doc, "result": result}))
    _say(args, f"ghost {'detected' if found_ghost else 'absent'}: "
               f"{len(walls)} walls reconstructed, analytic ghost plane y = {g.ghost_plane.offset:g}")
    return EXIT_OK if found_ghost else EXIT_NO_GHOST


def _common(p: argparse.ArgumentParser, top: bool = False) -> None:
    default = None if top else argparse.SUPPRESS
    p.add_argument("--seed", type=int, default=0 if top else argparse.SUPPRESS, help="RNG seed (u64)")
    p.add_argument("--out", default=default, help="output file (directory for montecarlo/ghost-demo)")
    p.add_argument("--quiet", action="store_true", default=False if top else argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="echoroom", description="Room walls from first-order echoes.")
    _common(parser, top=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate first-order echo delays")
    _common(p)
    p.add_argument("scene")
    p.add_argument("drone")
    p.add_argument("--sigma-t", type=float, default=0.0, help="Gaussian delay noise (s)")
    p.add_argument("--t0", type=float, default=0.0, help="emission time (s)")
    p.add_argument("--with-truth", action="store_true", help="include ground-truth wall labels")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="detect walls from an echoes file")
    _common(p)
    p.add_argument("echoes")
    p.add_argument("drone")
    p.add_argument("--source", default="auto", help="fixed:x,y,z | auto | drone")
    p.add_argument("--epsilon", type=float, default=cm.EPS_SORT, help="echo-sorting tolerance")
    p.add_argument("--rank-tol", type=float, default=cm.RANK_TOL)
    p.add_argument("--sigma-t", type=float, default=0.0, help="widen the tolerance for this delay noise")
    p.add_argument("--method", choices=["cm", "rank"], default="cm")
    p.add_argument("--tau-merge", type=float, default=TAU_MERGE)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("montecarlo", help="ghost-wall rate over random drone poses")
    _common(p)
    p.add_argument("scene", nargs="?", help="scene file (default: built-in 6x5x3 m room)")
    p.add_argument("drone", nargs="?", help="drone file (default: built-in drone)")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--box", type=lambda s: _floats(s, 6, "--box"),
                   help="xmin,ymin,zmin,xmax,ymax,zmax for the drone centre")
    p.add_argument("--mode", choices=["fixed", "drone"], default=None)
    p.add_argument("--method", choices=["cm", "rank"], default="cm")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("ghost-demo", help="reproduce the parallel-wall ghost")
    _common(p)
    p.add_argument("--perturb", type=float, default=0.0, help="shift one small wall (m)")
    p.add_argument("--epsilon", type=float, default=cm.EPS_SORT)
    p.set_defaults(func=cmd_ghost_demo)
    return parser


def main(argv: Optional[list] = None) -> int:
    level = os.environ.get("ECHOROOM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaError as exc:
        print(f"echoroom: schema error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except GeometryError as exc:
        print(f"echoroom: geometry error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_GEOMETRY
    except (SourceError, MissingLoudspeakerError) as exc:
        print(f"echoroom: cannot resolve loudspeaker: {exc}", file=sys.stderr)
        return EXIT_SOURCE
    except ConstructionError as exc:
        print(f"echoroom: self-check failed: {exc}", file=sys.stderr)
        return EXIT_SELFCHECK
    except (argparse.ArgumentTypeError, ValueError) as exc:
        print(f"echoroom: invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


def main_entry() -> None:
    sys.exit(main())
