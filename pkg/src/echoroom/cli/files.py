"""JSON interchange: scene, drone, echo and result files.

Floats are written with ``repr`` precision (shortest string that round-trips
exactly), so reading a file back reproduces the in-memory values bit for bit.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .. import __version__
from ..errors import EchoRoomError, GeometryError
from ..geometry import DroneBody, Plane, Pose, Wall
from ..reconstruction import DetectedWall
from ..simulator import SPEED_OF_SOUND, DroneSource, EchoLabel, EchoSet, FixedSource, Scene

QUATERNION_TOL = 1e-6

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENE_SCHEMA = {
    "type": "object",
    "required": ["walls", "source"],
    "additionalProperties": False,
    "properties": {
        "walls": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["vertices"],
                "additionalProperties": False,
                "properties": {"vertices": {"type": "array", "items": _vec3, "minItems": 3}},
            },
        },
        "source": {
            "oneOf": [
                {"type": "object", "required": ["mode", "position"], "additionalProperties": False,
                 "properties": {"mode": {"const": "fixed"}, "position": _vec3}},
                {"type": "object", "required": ["mode"], "additionalProperties": False,
                 "properties": {"mode": {"const": "drone"}}},
            ]
        },
        "speed_of_sound": {"type": "number", "exclusiveMinimum": 0},
        "audibility": {"enum": ["polygon", "plane"]},
    },
}

DRONE_SCHEMA = {
    "type": "object",
    "required": ["mics"],
    "additionalProperties": False,
    "properties": {
        "mics": {"type": "array", "items": _vec3, "minItems": 4, "maxItems": 4},
        "loudspeaker": _vec3,
        "pose": {
            "type": "object",
            "required": ["quaternion", "translation"],
            "additionalProperties": False,
            "properties": {
                "quaternion": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
                "translation": _vec3,
            },
        },
    },
}

_delay_list = {"type": "array", "items": {"type": "number"}}

ECHOES_SCHEMA = {
    "type": "object",
    "required": ["delays"],
    "properties": {
        "format": {"const": "echoroom.echoes/1"},
        "speed_of_sound": {"type": "number", "exclusiveMinimum": 0},
        "t0": {"type": "number"},
        "delays": {"type": "array", "items": _delay_list, "minItems": 4, "maxItems": 4},
        "direct": {"type": "array", "items": {"type": "number"}, "minItems": 4, "maxItems": 4},
        "truth": {
            "type": "array", "minItems": 4, "maxItems": 4,
            "items": {"type": "array", "items": {
                "type": "object", "required": ["wall", "mirror"],
                "properties": {"wall": {"type": "integer", "minimum": 0}, "mirror": _vec3},
            }},
        },
        "metadata": {"type": "object"},
    },
}


class SchemaError(EchoRoomError):
    """A file is not valid JSON or does not match its schema."""


def _field_path(err: jsonschema.ValidationError) -> str:
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path)


def load_json(path, schema: dict, what: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise SchemaError(f"{what} file {path}: {exc.strerror}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{what} file {path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaError(f"{what} file {path}: {_field_path(err)}: {err.message}")
    return doc


def scene_from_dict(doc: dict) -> Scene:
    walls = []
    for k, w in enumerate(doc["walls"]):
        try:
            walls.append(Wall(np.array(w["vertices"], dtype=float)))
        except GeometryError as exc:
            raise type(exc)(f"$.walls[{k}]: {exc}") from exc
    src = doc["source"]
    source = FixedSource(np.array(src["position"], dtype=float)) if src["mode"] == "fixed" else DroneSource()
    return Scene(tuple(walls), source, doc.get("audibility", "polygon"),
                 float(doc.get("speed_of_sound", SPEED_OF_SOUND)))


def load_scene(path) -> Scene:
    return scene_from_dict(load_json(path, SCENE_SCHEMA, "scene"))


def drone_from_dict(doc: dict) -> tuple[DroneBody, Pose]:
    ls = doc.get("loudspeaker")
    body = DroneBody(np.array(doc["mics"], dtype=float), None if ls is None else np.array(ls, dtype=float))
    pose = Pose.identity()
    if "pose" in doc:
        q = np.array(doc["pose"]["quaternion"], dtype=float)
        norm = np.linalg.norm(q)
        if abs(norm - 1.0) > QUATERNION_TOL:
            raise GeometryError(f"$.pose.quaternion: norm {norm:.9g} is not 1 within {QUATERNION_TOL}")
        pose = Pose(q / norm, np.array(doc["pose"]["translation"], dtype=float))
    return body, pose


def load_drone(path) -> tuple[DroneBody, Pose]:
    return drone_from_dict(load_json(path, DRONE_SCHEMA, "drone"))


def echoes_to_dict(echoes: EchoSet, c: float, with_truth: bool = False,
                   metadata: Optional[dict] = None) -> dict:
    doc = {
        "format": "echoroom.echoes/1",
        "speed_of_sound": float(c),
        "t0": float(echoes.t0),
        "delays": [d.tolist() for d in echoes.delays],
    }
    if echoes.direct is not None:
        doc["direct"] = echoes.direct.tolist()
    if with_truth and echoes.labels is not None:
        doc["truth"] = [[{"wall": lab.wall, "mirror": np.asarray(lab.mirror).tolist()} for lab in labs]
                        for labs in echoes.labels]
    if metadata is not None:
        doc["metadata"] = metadata
    return doc


def echoes_from_dict(doc: dict) -> EchoSet:
    labels = None
    if "truth" in doc:
        labels = tuple(tuple(EchoLabel(int(x["wall"]), np.array(x["mirror"], dtype=float)) for x in labs)
                       for labs in doc["truth"])
    try:
        return EchoSet(tuple(doc["delays"]), t0=float(doc.get("t0", 0.0)), labels=labels,
                       direct=doc.get("direct"))
    except ValueError as exc:
        raise SchemaError(f"echoes file: {exc}") from exc


def load_echoes(path) -> tuple[EchoSet, dict]:
    doc = load_json(path, ECHOES_SCHEMA, "echoes")
    return echoes_from_dict(doc), doc


def wall_to_dict(w: DetectedWall) -> dict:
    return {
        "mirror": w.mirror.tolist(),
        "normal": w.plane.normal.tolist(),
        "offset": w.plane.offset,
        "points": w.points.tolist(),
        "taus": w.taus.tolist(),
        "residual": w.residual,
        "consistency": w.consistency,
        "tuple": list(w.tuple) if w.tuple is not None else None,
        "duplicates": w.duplicates,
    }


def wall_from_dict(d: dict) -> DetectedWall:
    return DetectedWall(
        mirror=np.array(d["mirror"], dtype=float),
        plane=Plane(np.array(d["normal"], dtype=float), d["offset"]),
        points=np.array(d["points"], dtype=float),
        taus=np.array(d["taus"], dtype=float),
        tuple=tuple(d["tuple"]) if d.get("tuple") is not None else None,
        residual=float(d["residual"]),
        consistency=float(d["consistency"]),
        duplicates=int(d.get("duplicates", 0)),
    )


def read_result(path) -> tuple[list[DetectedWall], dict]:
    doc = json.loads(Path(path).read_text())
    return [wall_from_dict(w) for w in doc["walls"]], doc


def metadata(seed, digest: str, **extra) -> dict:
    return {"version": __version__, "seed": seed, "config_digest": digest, **extra}


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=True) + "\n"


def csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for r in rows:
        writer.writerow({k: r[k] for k in columns})
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        os.unlink(tmp)
        raise
