"""Room-wall reconstruction from first-order echoes heard by a four-microphone drone."""
from .errors import EchoRoomError, GeometryError, MissingLoudspeakerError, NegativeDelayError
from .geometry import DroneBody, Plane, Pose, Wall, random_pose, reflect_point
from .simulator import DroneSource, EchoSet, FixedSource, NoiseModel, Scene, add_noise, box_room, simulate_echoes
from .reconstruction import (
    DetectedWall,
    dedupe_walls,
    detect_walls,
    detect_walls_rank,
    localize_loudspeaker,
    recover_mirror_point,
    recover_wall,
)

__version__ = "0.1.0"

__all__ = [
    "EchoRoomError", "GeometryError", "MissingLoudspeakerError", "NegativeDelayError",
    "DroneBody", "Plane", "Pose", "Wall", "random_pose", "reflect_point",
    "DroneSource", "EchoSet", "FixedSource", "NoiseModel", "Scene", "add_noise", "box_room",
    "simulate_echoes", "DetectedWall", "dedupe_walls", "detect_walls", "detect_walls_rank",
    "localize_loudspeaker", "recover_mirror_point", "recover_wall", "__version__",
]
