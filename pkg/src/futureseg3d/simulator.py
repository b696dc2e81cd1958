"""Synthetic pinhole world with an exact ray-cast renderer.

Scenes are labeled geometric primitives (finite plane patches, axis-aligned
boxes, spheres). Rendering casts one ray through every pixel center and
records the camera-frame z of the nearest hit, which makes the output an
exact oracle for the depth -> point cloud -> warp pipeline. Rays that hit
nothing give an invalid depth and a MISSING label.

Rendering is deterministic; if FUTURESEG3D_THREADS is set above 1 the rows
are processed in parallel chunks whose results are assembled by index, so
the output is bit-identical for every thread count.
"""

from __future__ import annotations

import concurrent.futures
import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fileio import FormatError
from .geometry import (
    MISSING,
    CameraIntrinsics,
    DepthMap,
    EgoMotionVector,
    SE3Transform,
    SegmentationMap,
    egomotion_to_se3,
    se3_compose,
)

THREADS_ENV = "FUTURESEG3D_THREADS"

_NEAR = 1e-9  # rays start just in front of the camera center

SCENE_FORMAT = "fseg3d-scene"
SCENE_VERSION = 1


# ---------------------------------------------------------------------------
# Primitives. Intersection routines take ray origins o (3,) and directions
# dirs (..., 3) in world coordinates and return the smallest positive ray
# parameter per pixel (inf for misses). Directions are deliberately not
# normalized: with camera-frame z component 1, the parameter equals the
# camera-frame depth.

@dataclass(frozen=True)
class PlanePatch:
    """Finite plane: corner origin plus two independent edge vectors."""

    class_id: int
    origin: np.ndarray
    edge_u: np.ndarray
    edge_v: np.ndarray

    def __post_init__(self):
        for name in ("origin", "edge_u", "edge_v"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if np.linalg.norm(np.cross(self.edge_u, self.edge_v)) <= 0.0:
            raise ValueError("plane edges must be linearly independent")

    def intersect(self, o: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        normal = np.cross(self.edge_u, self.edge_v)
        denom = dirs @ normal
        guu = self.edge_u @ self.edge_u
        gvv = self.edge_v @ self.edge_v
        guv = self.edge_u @ self.edge_v
        det = guu * gvv - guv * guv
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((self.origin - o) @ normal) / denom
            rel = o + t[..., None] * dirs - self.origin
            ru = rel @ self.edge_u
            rv = rel @ self.edge_v
            alpha = (gvv * ru - guv * rv) / det
            beta = (guu * rv - guv * ru) / det
            hit = (np.abs(denom) > 0.0) & (t > _NEAR) \
                & (alpha >= 0.0) & (alpha <= 1.0) & (beta >= 0.0) & (beta <= 1.0)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with strictly positive extent on every axis."""

    class_id: int
    min_corner: np.ndarray
    max_corner: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "min_corner",
                           np.asarray(self.min_corner, dtype=np.float64).reshape(3))
        object.__setattr__(self, "max_corner",
                           np.asarray(self.max_corner, dtype=np.float64).reshape(3))
        if not np.all(self.max_corner > self.min_corner):
            raise ValueError("box must have positive extent on every axis")

    def intersect(self, o: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (self.min_corner - o) / dirs
            t2 = (self.max_corner - o) / dirs
        zero = dirs == 0.0
        inside = (o >= self.min_corner) & (o <= self.max_corner)
        near_ax = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        far_ax = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        tnear = near_ax.max(axis=-1)
        tfar = far_ax.min(axis=-1)
        hit = (tnear <= tfar) & (tfar > _NEAR)
        t = np.where(tnear > _NEAR, tnear, tfar)
        return np.where(hit, t, np.inf)


@dataclass(frozen=True)
class Sphere:
    class_id: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center",
                           np.asarray(self.center, dtype=np.float64).reshape(3))
        if not self.radius > 0.0:
            raise ValueError("sphere radius must be positive")

    def intersect(self, o: np.ndarray, dirs: np.ndarray) -> np.ndarray:
        oc = o - self.center
        a = np.sum(dirs * dirs, axis=-1)
        b = 2.0 * (dirs @ oc)
        c = oc @ oc - self.radius ** 2
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        t_near = (-b - sq) / (2.0 * a)
        t_far = (-b + sq) / (2.0 * a)
        t = np.where(t_near > _NEAR, t_near, t_far)
        hit = (disc >= 0.0) & (t > _NEAR)
        return np.where(hit, t, np.inf)


Primitive = PlanePatch | Box | Sphere


@dataclass(frozen=True)
class Scene:
    """World of labeled primitives; background_class names the label that
    conceptually surrounds the scene (no-hit pixels still render MISSING)."""

    primitives: tuple[Primitive, ...]
    num_classes: int
    background_class: int = 0

    def __post_init__(self):
        prims = tuple(self.primitives)
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if not (0 <= self.background_class < self.num_classes):
            raise ValueError("background_class out of range")
        for p in prims:
            if not (0 <= p.class_id < self.num_classes):
                raise ValueError(f"primitive class {p.class_id} outside [0, {self.num_classes})")
        object.__setattr__(self, "primitives", prims)


@dataclass(frozen=True)
class CameraPose:
    """World-from-camera transform: p_world = R @ p_cam + t."""

    world_from_camera: SE3Transform

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls(SE3Transform.identity())


# ---------------------------------------------------------------------------
# Trajectories. The per-step parameters are expressed directly in the
# ego-motion transform convention (see geometry module docstring): a camera
# driving forward has negative tz.

TRAJECTORY_KINDS = ("constant_velocity", "constant_acceleration", "circular_turn")


@dataclass(frozen=True)
class TrajectorySpec:
    kind: str
    num_steps: int
    noise_sigma: np.ndarray
    velocity: np.ndarray | None = None
    acceleration: np.ndarray | None = None
    total_angle: float | None = None
    step_translation: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in TRAJECTORY_KINDS:
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.num_steps < 2:
            raise ValueError(f"num_steps must be >= 2, got {self.num_steps}")
        sigma = np.broadcast_to(np.asarray(self.noise_sigma, dtype=np.float64),
                                (6,)).copy()
        if np.any(sigma < 0.0):
            raise ValueError("noise_sigma must be non-negative")
        object.__setattr__(self, "noise_sigma", sigma)
        for name in ("velocity", "acceleration"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, _as_motion6(value))
        if self.step_translation is not None:
            object.__setattr__(self, "step_translation",
                               np.asarray(self.step_translation, dtype=np.float64).reshape(3))
        needed = {
            "constant_velocity": ("velocity",),
            "constant_acceleration": ("velocity", "acceleration"),
            "circular_turn": ("total_angle", "step_translation"),
        }[self.kind]
        for name in needed:
            if getattr(self, name) is None:
                raise ValueError(f"{self.kind} trajectory requires {name}")

    @classmethod
    def constant_velocity(cls, velocity, num_steps: int, noise_sigma=0.0) -> "TrajectorySpec":
        return cls("constant_velocity", num_steps, noise_sigma, velocity=velocity)

    @classmethod
    def constant_acceleration(cls, velocity, acceleration, num_steps: int,
                              noise_sigma=0.0) -> "TrajectorySpec":
        return cls("constant_acceleration", num_steps, noise_sigma,
                   velocity=velocity, acceleration=acceleration)

    @classmethod
    def circular_turn(cls, total_angle: float, step_translation, num_steps: int,
                      noise_sigma=0.0) -> "TrajectorySpec":
        return cls("circular_turn", num_steps, noise_sigma,
                   total_angle=float(total_angle), step_translation=step_translation)

    def motion(self, step: int) -> EgoMotionVector:
        """Exact ego-motion of the given step (0-based)."""
        if self.kind == "constant_velocity":
            return EgoMotionVector.from_array(self.velocity)
        if self.kind == "constant_acceleration":
            return EgoMotionVector.from_array(self.velocity + step * self.acceleration)
        yaw = self.total_angle / self.num_steps
        return EgoMotionVector(*self.step_translation, 0.0, yaw, 0.0)


def _as_motion6(values) -> np.ndarray:
    """Accept a 3-vector (translation only) or a full 6-vector."""
    a = np.asarray(values, dtype=np.float64).reshape(-1)
    if a.size == 3:
        return np.concatenate([a, np.zeros(3)])
    if a.size == 6:
        return a
    raise ValueError(f"motion parameters need 3 or 6 components, got {a.size}")


def trajectory_motions(spec: TrajectorySpec) -> list[EgoMotionVector]:
    """Exact per-step motions, noise-free."""
    return [spec.motion(j) for j in range(spec.num_steps)]


# ---------------------------------------------------------------------------
# Rendering.

def thread_count() -> int:
    """Parallelism cap from FUTURESEG3D_THREADS (default 1)."""
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}")
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _render_rows(scene: Scene, origin: np.ndarray, dirs: np.ndarray):
    depth = np.full(dirs.shape[:2], np.inf)
    classes = np.full(dirs.shape[:2], MISSING, dtype=np.int16)
    for prim in scene.primitives:
        t = prim.intersect(origin, dirs)
        closer = t < depth
        depth[closer] = t[closer]
        classes[closer] = prim.class_id
    return depth, classes


def render(scene: Scene, pose: CameraPose, k: CameraIntrinsics
           ) -> tuple[DepthMap, SegmentationMap]:
    """Cast one ray per pixel center; nearest primitive wins.

    Depth is the camera-frame z of the hit. Coincident surfaces resolve to
    the earliest-listed primitive.
    """
    cols = np.arange(k.width, dtype=np.float64)
    rows = np.arange(k.height, dtype=np.float64)
    ci, rj = np.meshgrid(cols, rows)
    dirs_cam = np.stack([(ci - k.cx) / k.fx, (rj - k.cy) / k.fy,
                         np.ones_like(ci)], axis=-1)
    wfc = pose.world_from_camera
    dirs = dirs_cam @ wfc.rotation.T
    origin = wfc.translation

    n = min(thread_count(), k.height)
    if n <= 1:
        depth, classes = _render_rows(scene, origin, dirs)
    else:
        bounds = np.linspace(0, k.height, n + 1, dtype=int)
        chunks = [(bounds[i], bounds[i + 1]) for i in range(n) if bounds[i] < bounds[i + 1]]
        depth = np.empty((k.height, k.width))
        classes = np.empty((k.height, k.width), dtype=np.int16)
        with concurrent.futures.ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            futures = {pool.submit(_render_rows, scene, origin, dirs[lo:hi]): (lo, hi)
                       for lo, hi in chunks}
            for fut in concurrent.futures.as_completed(futures):
                lo, hi = futures[fut]
                depth[lo:hi], classes[lo:hi] = fut.result()

    miss = ~np.isfinite(depth)
    depth[miss] = np.nan
    classes[miss] = MISSING
    return DepthMap(depth), SegmentationMap(classes, scene.num_classes)


# ---------------------------------------------------------------------------
# Sequences.

@dataclass(frozen=True)
class SequenceFrame:
    pose: CameraPose
    depth: DepthMap
    segmentation: SegmentationMap
    # Emitted ego-motion measurement to the next frame (noisy when
    # noise_sigma > 0); None for the last frame.
    motion_to_next: EgoMotionVector | None


def generate_sequence(scene: Scene, spec: TrajectorySpec, k: CameraIntrinsics,
                      seed: int = 0, start_pose: CameraPose | None = None
                      ) -> list[SequenceFrame]:
    """Render num_steps + 1 frames along the exact trajectory.

    Poses integrate the exact motions; the emitted measurements add
    seeded Gaussian noise on top when noise_sigma > 0.
    """
    rng = np.random.default_rng(seed)
    exact = trajectory_motions(spec)
    emitted = []
    for m in exact:
        if np.any(spec.noise_sigma > 0.0):
            noisy = m.as_array() + rng.normal(0.0, 1.0, size=6) * spec.noise_sigma
            emitted.append(EgoMotionVector.from_array(noisy))
        else:
            emitted.append(m)

    pose = start_pose if start_pose is not None else CameraPose.identity()
    frames = []
    for n in range(spec.num_steps + 1):
        depth, seg = render(scene, pose, k)
        motion = emitted[n] if n < spec.num_steps else None
        frames.append(SequenceFrame(pose, depth, seg, motion))
        if n < spec.num_steps:
            step = egomotion_to_se3(exact[n])
            pose = CameraPose(se3_compose(pose.world_from_camera, step.inverse()))
    return frames


# ---------------------------------------------------------------------------
# The fixed default test scene: a street canyon of 5 classes -- road plane,
# two building walls, and three box obstacles.

CANYON_CLASSES = 5


def street_canyon() -> Scene:
    road = PlanePatch(0, origin=(-12.0, 1.5, 0.0), edge_u=(24.0, 0.0, 0.0),
                      edge_v=(0.0, 0.0, 60.0))
    wall_left = PlanePatch(1, origin=(-6.0, -4.0, 0.0), edge_u=(0.0, 5.5, 0.0),
                           edge_v=(0.0, 0.0, 60.0))
    wall_right = PlanePatch(1, origin=(6.0, -4.0, 0.0), edge_u=(0.0, 5.5, 0.0),
                            edge_v=(0.0, 0.0, 60.0))
    box_a = Box(2, min_corner=(-3.2, 0.1, 8.0), max_corner=(-1.4, 1.5, 11.0))
    box_b = Box(3, min_corner=(1.2, 0.4, 14.0), max_corner=(2.8, 1.5, 17.5))
    box_c = Box(4, min_corner=(-4.8, -0.6, 24.0), max_corner=(-3.4, 1.5, 27.0))
    return Scene((road, wall_left, wall_right, box_a, box_b, box_c),
                 num_classes=CANYON_CLASSES, background_class=1)


def default_camera(width: int = 256, height: int = 128) -> CameraIntrinsics:
    return CameraIntrinsics(fx=width / 2.0, fy=width / 2.0,
                            cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
                            width=width, height=height)


def default_trajectory(num_steps: int = 5) -> TrajectorySpec:
    # gentle forward drive with a slight turn; forward means negative tz,
    # and 0.4 is under 5% of the canyon's mean depth per step
    return TrajectorySpec.constant_velocity(
        (0.0, 0.0, -0.4, 0.0, 0.012, 0.0), num_steps=num_steps)


# ---------------------------------------------------------------------------
# Scene spec files: JSON listing primitives, classes, trajectory parameters,
# and optionally the camera.

def save_scene_spec(path, scene: Scene, trajectory: TrajectorySpec,
                    camera: CameraIntrinsics | None = None) -> None:
    prims = []
    for p in scene.primitives:
        if isinstance(p, PlanePatch):
            prims.append({"type": "plane", "class": p.class_id,
                          "origin": list(p.origin), "edge_u": list(p.edge_u),
                          "edge_v": list(p.edge_v)})
        elif isinstance(p, Box):
            prims.append({"type": "box", "class": p.class_id,
                          "min": list(p.min_corner), "max": list(p.max_corner)})
        else:
            prims.append({"type": "sphere", "class": p.class_id,
                          "center": list(p.center), "radius": p.radius})
    traj = {"kind": trajectory.kind, "num_steps": trajectory.num_steps,
            "noise_sigma": list(trajectory.noise_sigma)}
    if trajectory.velocity is not None:
        traj["velocity"] = list(trajectory.velocity)
    if trajectory.acceleration is not None:
        traj["acceleration"] = list(trajectory.acceleration)
    if trajectory.total_angle is not None:
        traj["total_angle"] = trajectory.total_angle
        traj["step_translation"] = list(trajectory.step_translation)
    doc = {
        "format": SCENE_FORMAT,
        "version": SCENE_VERSION,
        "num_classes": scene.num_classes,
        "background_class": scene.background_class,
        "primitives": prims,
        "trajectory": traj,
    }
    if camera is not None:
        doc["camera"] = {"fx": camera.fx, "fy": camera.fy, "cx": camera.cx,
                         "cy": camera.cy, "width": camera.width, "height": camera.height}
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                          encoding="ascii")


def load_scene_spec(path) -> tuple[Scene, TrajectorySpec, CameraIntrinsics | None]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unparsable scene spec: {exc}") from exc
    if doc.get("format") != SCENE_FORMAT or doc.get("version") != SCENE_VERSION:
        raise FormatError(f"{path}: not a {SCENE_FORMAT} v{SCENE_VERSION} file")
    try:
        prims = []
        for idx, entry in enumerate(doc["primitives"]):
            kind = entry["type"]
            cls = entry["class"]
            if kind == "plane":
                prims.append(PlanePatch(cls, entry["origin"], entry["edge_u"],
                                        entry["edge_v"]))
            elif kind == "box":
                prims.append(Box(cls, entry["min"], entry["max"]))
            elif kind == "sphere":
                prims.append(Sphere(cls, entry["center"], entry["radius"]))
            else:
                raise FormatError(f"{path}: primitive {idx}: unknown type {kind!r}")
        scene = Scene(tuple(prims), doc["num_classes"],
                      doc.get("background_class", 0))
        traj_doc = doc["trajectory"]
        trajectory = TrajectorySpec(
            kind=traj_doc["kind"],
            num_steps=traj_doc["num_steps"],
            noise_sigma=traj_doc.get("noise_sigma", 0.0),
            velocity=traj_doc.get("velocity"),
            acceleration=traj_doc.get("acceleration"),
            total_angle=traj_doc.get("total_angle"),
            step_translation=traj_doc.get("step_translation"),
        )
        camera = None
        if "camera" in doc:
            camera = CameraIntrinsics(**doc["camera"])
    except FormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid scene spec: {exc}") from exc
    return scene, trajectory, camera
