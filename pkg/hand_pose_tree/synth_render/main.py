# hand_pose_tree/synth_render/main.py

"""
Fuente de datos sintética: mano de cápsulas + losa de palma, render de profundidad
por intersección analítica de rayos, muestreo de poses y generación de datasets
deterministas por (semilla, id de muestra).
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.spatial import ConvexHull
from scipy.spatial.transform import Rotation

from hand_pose_tree.depth_geometry import (
    MISSING,
    CameraModel,
    DepthFrame,
    SurfaceNormalMap,
    cloud_center,
    crop_and_normalize,
    estimate_normals,
    fill_background,
    hand_cloud,
    project_joint,
    sample_depth,
)
from hand_pose_tree.errors import BehindCameraError, EmptyFrameError, HandPoseError, RejectedSampleError
from hand_pose_tree.hand_model import (
    CHAINS,
    FINGERS,
    PALM_JOINTS,
    REFERENCE_JOINTS,
    JointSet,
    KinematicParams,
    Quaternion,
    forward_kinematics,
    hand_frame,
)
from hand_pose_tree.losses import classify_hand
from hand_pose_tree.synth_render.dataset_io import (
    SceneSample,
    prepare_output_dir,
    write_manifest,
    write_sample,
)

_NO_HIT = np.inf


class PoseRanges(BaseModel):
    """Rangos uniformes (grados / mm) de las poses sintéticas."""

    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={"example": {"finger_pip": [0.0, 90.0], "distance": [650.0, 850.0]}},
    )

    finger_abduction: tuple[float, float] = (-15.0, 15.0)
    finger_mcp: tuple[float, float] = (-10.0, 80.0)
    finger_pip: tuple[float, float] = (0.0, 90.0)
    finger_dip: tuple[float, float] = (0.0, 70.0)
    thumb_abduction: tuple[float, float] = (-20.0, 20.0)
    thumb_root: tuple[float, float] = (0.0, 40.0)
    thumb_mcp: tuple[float, float] = (0.0, 50.0)
    thumb_ip: tuple[float, float] = (0.0, 60.0)
    roll: tuple[float, float] = (-45.0, 45.0)
    pitch: tuple[float, float] = (-30.0, 30.0)
    yaw: tuple[float, float] = (-30.0, 30.0)
    distance: tuple[float, float] = (650.0, 850.0)

    @model_validator(mode="after")
    def _ordered(self):
        for name, (lo, hi) in self:
            if lo > hi:
                raise ValueError(f"rango desordenado en {name}: {lo} > {hi}")
        return self

    @classmethod
    def collapsed(cls, distance: float = 750.0) -> "PoseRanges":
        zero = (0.0, 0.0)
        return cls(**{name: zero for name in cls.model_fields if name != "distance"}, distance=(distance, distance))


class RenderConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={"example": {"width": 256, "height": 256, "focal": 588.0, "cube_mm": 250.0}},
    )

    width: int = Field(256, gt=0)
    height: int = Field(256, gt=0)
    focal: float = Field(588.0, gt=0)
    cube_mm: float = Field(250.0, gt=0)
    finger_radius: float = Field(7.0, gt=0)
    thumb_radius: float = Field(9.5, gt=0)
    palm_radius: float = Field(11.0, gt=0)
    max_redraws: int = Field(10, ge=0)
    # residuo de apariencia máximo del ground truth (mm); por encima se vuelve a sortear
    max_appearance_violation_mm: float = Field(1.0, ge=0)

    def camera(self) -> CameraModel:
        return CameraModel(self.focal, self.focal, self.width / 2.0, self.height / 2.0)


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float


@dataclass(frozen=True)
class CapsuleHand:
    capsules: tuple
    palm: np.ndarray
    palm_radius: float

    @classmethod
    def from_joints(cls, joints, finger_radius: float = 7.0, thumb_radius: float = 9.5,
                    palm_radius: float = 11.0) -> "CapsuleHand":
        j = joints.joints if isinstance(joints, JointSet) else np.asarray(joints, dtype=np.float64)
        capsules = []
        for finger in FINGERS:
            root, chain = CHAINS[finger]
            points = [root, *chain]
            for k in range(3):
                radius = thumb_radius if (finger == "thumb" and k == 0) else finger_radius
                capsules.append(Capsule(j[points[k]].copy(), j[points[k + 1]].copy(), radius))
        return cls(tuple(capsules), j[list(PALM_JOINTS)].copy(), palm_radius)

    def scaled(self, factor: float) -> "CapsuleHand":
        caps = tuple(Capsule(c.p0, c.p1, c.radius * factor) for c in self.capsules)
        return CapsuleHand(caps, self.palm, self.palm_radius * factor)


def _pixel_rays(cam: CameraModel, width: int, height: int) -> np.ndarray:
    """Direcciones (h·w, 3) con componente z = 1: el parámetro t es la profundidad."""
    rows, cols = np.indices((height, width), dtype=np.float64)
    dirs = np.stack([(cols - cam.px) / cam.fx, (rows - cam.py) / cam.fy, np.ones_like(cols)], axis=-1)
    return dirs.reshape(-1, 3)


def _sphere_hits(dirs, center, radius):
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = dirs @ center
    disc = b * b - a * (center @ center - radius * radius)
    t = (b - np.sqrt(np.maximum(disc, 0.0))) / a
    return np.where((disc >= 0.0) & (t > 0.0), t, _NO_HIT)


def _capsule_hits(dirs, capsule: Capsule):
    """Primera intersección rayo-cápsula: cilindro + dos tapas esféricas."""
    axis = capsule.p1 - capsule.p0
    length = np.linalg.norm(axis)
    best = np.minimum(_sphere_hits(dirs, capsule.p0, capsule.radius), _sphere_hits(dirs, capsule.p1, capsule.radius))
    if length < 1e-9:
        return best
    k = axis / length
    origin = -capsule.p0
    d_par = dirs @ k
    d_perp = dirs - d_par[:, None] * k
    o_perp = origin - (origin @ k) * k
    a = np.einsum("ij,ij->i", d_perp, d_perp)
    b = 2.0 * (d_perp @ o_perp)
    c = o_perp @ o_perp - capsule.radius ** 2
    disc = b * b - 4.0 * a * c
    valid = (disc >= 0.0) & (a > 1e-12)
    t = np.where(valid, (-b - np.sqrt(np.maximum(disc, 0.0))) / np.where(a > 1e-12, 2.0 * a, 1.0), _NO_HIT)
    with np.errstate(invalid="ignore"):
        along = origin @ k + t * d_par
    t = np.where(valid & (t > 0.0) & (along >= 0.0) & (along <= length), t, _NO_HIT)
    return np.minimum(best, t)


def _slab_hits(dirs, hand: CapsuleHand):
    """Suma de Minkowski del polígono convexo de la palma con una esfera."""
    frame = hand_frame(_palm_joint_set(hand.palm))
    local = frame.apply_inverse(hand.palm)
    plane_z = float(local[:, 2].mean())
    hull = ConvexHull(local[:, :2])
    vertices = local[hull.vertices]
    vertices[:, 2] = plane_z
    world_vertices = frame.apply(vertices)

    normal = frame.rotation[:, 2]
    center = frame.apply(np.array([0.0, 0.0, plane_z]))
    denom = dirs @ normal
    best = np.full(dirs.shape[0], _NO_HIT)
    for side in (-1.0, 1.0):
        plane_point = center + side * hand.palm_radius * normal
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(np.abs(denom) > 1e-12, (plane_point @ normal) / denom, _NO_HIT)
        hit = dirs * np.where(np.isfinite(t), t, 0.0)[:, None]
        xy = frame.apply_inverse(hit)[:, :2]
        inside = np.all(xy @ hull.equations[:, :2].T + hull.equations[:, 2] <= 1e-9, axis=1)
        best = np.minimum(best, np.where(inside & (t > 0.0), t, _NO_HIT))
    n = len(world_vertices)
    for i in range(n):
        edge = Capsule(world_vertices[i], world_vertices[(i + 1) % n], hand.palm_radius)
        best = np.minimum(best, _capsule_hits(dirs, edge))
    return best


def _palm_joint_set(palm) -> np.ndarray:
    full = np.zeros((20, 3))
    full[list(PALM_JOINTS)] = palm
    return full


@dataclass
class RenderResult:
    frame: DepthFrame
    normals: Optional[SurfaceNormalMap] = None


def render_depth(hand: Optional[CapsuleHand], cam: CameraModel, size, with_normals: bool = False,
                 pixel_pitch=(1.0, 1.0)) -> RenderResult:
    """
    Profundidad por el impacto más cercano de cada rayo de píxel. Con
    ``with_normals`` devuelve además las normales analíticas en la convención de
    la imagen de profundidad (las mismas que ``estimate_normals`` aproxima).
    """
    width, height = int(size[0]), int(size[1])
    dirs = _pixel_rays(cam, width, height)
    depth = np.full(dirs.shape[0], _NO_HIT)
    if hand is not None:
        for capsule in hand.capsules:
            if capsule.p0[2] <= 0.0 or capsule.p1[2] <= 0.0:
                raise BehindCameraError("la mano está detrás de la cámara")
            depth = np.minimum(depth, _capsule_hits(dirs, capsule))
        depth = np.minimum(depth, _slab_hits(dirs, hand))

    hit = np.isfinite(depth)
    image = np.where(hit, depth, MISSING).reshape(height, width)
    frame = DepthFrame(image, pixel_pitch=pixel_pitch)
    if not with_normals:
        return RenderResult(frame)
    return RenderResult(frame, _analytic_normals(hand, dirs, depth, hit, cam, pixel_pitch, width, height))


def _closest_surface_normal(points, hand: CapsuleHand) -> np.ndarray:
    """Normal geométrica exterior de la primitiva más cercana a cada punto."""
    best_dist = np.full(points.shape[0], np.inf)
    normals = np.zeros_like(points)
    primitives = list(hand.capsules)
    frame = hand_frame(_palm_joint_set(hand.palm))
    local = frame.apply_inverse(hand.palm)
    hull = ConvexHull(local[:, :2])
    verts = frame.apply(np.column_stack([local[hull.vertices, :2], np.full(len(hull.vertices), local[:, 2].mean())]))
    primitives += [Capsule(verts[i], verts[(i + 1) % len(verts)], hand.palm_radius) for i in range(len(verts))]
    for cap in primitives:
        axis = cap.p1 - cap.p0
        length2 = max(axis @ axis, 1e-12)
        s = np.clip((points - cap.p0) @ axis / length2, 0.0, 1.0)
        closest = cap.p0 + s[:, None] * axis
        offset = points - closest
        dist = np.abs(np.linalg.norm(offset, axis=1) - cap.radius)
        better = dist < best_dist
        normals[better] = offset[better] / np.maximum(np.linalg.norm(offset[better], axis=1, keepdims=True), 1e-12)
        best_dist[better] = dist[better]
    # caras de la losa
    rel = points - frame.apply(np.array([0.0, 0.0, local[:, 2].mean()]))
    height = rel @ frame.rotation[:, 2]
    xy = (rel @ frame.rotation)[:, :2]
    inside = np.all(xy @ hull.equations[:, :2].T + hull.equations[:, 2] <= 1e-9, axis=1)
    dist = np.abs(np.abs(height) - hand.palm_radius)
    better = inside & (dist < best_dist)
    normals[better] = np.sign(height[better])[:, None] * frame.rotation[:, 2]
    return normals


def _analytic_normals(hand, dirs, depth, hit, cam, pixel_pitch, width, height) -> SurfaceNormalMap:
    out = np.zeros((dirs.shape[0], 3))
    out[:, 2] = 1.0
    if hand is not None and hit.any():
        points = dirs[hit] * depth[hit][:, None]
        n = _closest_surface_normal(points, hand)
        # n·(P/z) = derivada de la profundidad a lo largo del rayo
        along = np.einsum("ij,ij->i", n, dirs[hit])
        along = np.where(np.abs(along) > 1e-9, along, -1e-9)
        z = depth[hit]
        dz_du = -n[:, 0] * (z / cam.fx) / along
        dz_dv = -n[:, 1] * (z / cam.fy) / along
        s = np.stack([dz_du / pixel_pitch[0], dz_dv / pixel_pitch[1], np.ones_like(z)], axis=-1)
        out[hit] = s / np.linalg.norm(s, axis=1, keepdims=True)
    return SurfaceNormalMap(out.reshape(height, width, 3))


def sample_pose(rng: np.random.Generator, ranges: PoseRanges | None = None) -> tuple[KinematicParams, Quaternion]:
    """Pose uniforme dentro de ``ranges``; el cuaternión es el punto de vista de la palma."""
    ranges = ranges or PoseRanges()

    def draw(bounds, size=None):
        return rng.uniform(bounds[0], bounds[1], size=size)

    angles = np.zeros((5, 4))
    angles[:4, 0] = draw(ranges.finger_abduction, 4)
    angles[:4, 1] = draw(ranges.finger_mcp, 4)
    angles[:4, 2] = draw(ranges.finger_pip, 4)
    angles[:4, 3] = draw(ranges.finger_dip, 4)
    angles[4] = [draw(ranges.thumb_abduction), draw(ranges.thumb_root), draw(ranges.thumb_mcp), draw(ranges.thumb_ip)]

    euler = [draw(ranges.roll), draw(ranges.pitch), draw(ranges.yaw)]
    rotation = Rotation.from_euler("zxy", euler, degrees=True).as_matrix()
    quaternion = Quaternion.from_matrix(rotation)
    distance = draw(ranges.distance)

    # la mano de referencia queda centrada a la distancia sorteada
    centroid = REFERENCE_JOINTS.joints.mean(axis=0)
    translation = np.array([0.0, 0.0, distance]) - rotation @ centroid
    params = KinematicParams.reference().replace(
        palm_rotation=quaternion,
        palm_translation=translation,
        joint_angles=angles,
    )
    return params, quaternion


def appearance_violation(sample: SceneSample, crop_size: int = 96) -> np.ndarray:
    """
    Residuo de bisagra por articulación (mm) sobre la misma superficie que ve la
    pérdida de apariencia en entrenamiento: 0 si todas quedan tras la superficie.
    """
    crop, xform = crop_and_normalize(sample.frame, sample.camera, sample.center_world, sample.cube,
                                     (crop_size, crop_size))
    filled = fill_background(crop)
    uvz = project_joint(sample.zero_mean_joints(), xform)
    surface = sample_depth(filled, uvz[:, 0], uvz[:, 1], estimate_normals(crop))
    return np.maximum(surface - uvz[:, 2], 0.0)


def _as_float32(depth: np.ndarray) -> np.ndarray:
    return np.asarray(depth, dtype="<f4").astype(np.float64)


def generate_sample(sample_id: int, seed: int, ranges: PoseRanges | None = None,
                    render: RenderConfig | None = None) -> SceneSample:
    """
    Muestra ``sample_id`` de la semilla ``seed``. Se vuelve a sortear la pose si la mano
    no es visible o si el ground truth queda delante de la superficie renderizada más
    de ``max_appearance_violation_mm``.
    """
    ranges = ranges or PoseRanges()
    render = render or RenderConfig()
    rng = np.random.default_rng([seed, sample_id])
    cam = render.camera()
    rejected = 0
    for attempt in range(render.max_redraws + 1):
        params, quaternion = sample_pose(rng, ranges)
        joints = forward_kinematics(params)
        hand = CapsuleHand.from_joints(joints, render.finger_radius, render.thumb_radius, render.palm_radius)
        try:
            rendered = render_depth(hand, cam, (render.width, render.height))
            frame = DepthFrame(_as_float32(rendered.frame.depth))
            center = cloud_center(hand_cloud(frame, cam))
        except (EmptyFrameError, BehindCameraError):
            continue
        sample = SceneSample(
            sample_id=sample_id,
            frame=frame,
            joints=joints,
            quaternion=quaternion,
            camera=cam,
            center_world=center,
            center_image=cam.project(center),
            cube=render.cube_mm,
            finger_states=classify_hand(joints.joints),
        )
        violation = float(appearance_violation(sample).max())
        if violation > render.max_appearance_violation_mm:
            rejected += 1
            logger.debug(f"[RENDER] muestra {sample_id}, intento {attempt}: ground truth {violation:.2f} mm "
                         f"delante de la superficie, se vuelve a sortear")
            continue
        sample.provenance = {
            "generator": "synth_render",
            "seed": int(seed),
            "redraws": attempt,
            "appearance_violation_mm": violation,
        }
        return sample
    if rejected:
        raise RejectedSampleError(f"la muestra {sample_id} violó la consistencia de apariencia en {rejected} "
                                  f"de {render.max_redraws + 1} intentos")
    raise EmptyFrameError(f"la muestra {sample_id} no produjo píxeles de mano tras {render.max_redraws} intentos")


def _generate_job(args):
    return generate_sample(*args)


def generate_dataset(out_dir: str, count: int, seed: int, ranges: PoseRanges | None = None,
                     render: RenderConfig | None = None, workers: int = 1) -> list:
    """Genera ``count`` muestras en ``out_dir``; determinista para una misma semilla."""
    if count <= 0:
        raise HandPoseError(f"count debe ser > 0, recibido {count}")
    prepare_output_dir(out_dir)
    jobs = [(i, seed, ranges, render) for i in range(count)]
    stems = []
    logger.info(f"[RENDER] Generando {count} muestras (semilla {seed}, {workers} procesos)")
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for sample in pool.map(_generate_job, jobs, chunksize=16):
                stems.append(write_sample(out_dir, sample))
    else:
        for job in jobs:
            stems.append(write_sample(out_dir, _generate_job(job)))
    write_manifest(out_dir, stems)
    logger.success(f"[RENDER] ✅ Dataset listo en {out_dir}")
    return stems


__all__ = [
    "Capsule", "CapsuleHand", "PoseRanges", "RenderConfig", "RenderResult", "appearance_violation",
    "generate_dataset", "generate_sample", "render_depth", "sample_pose",
]
