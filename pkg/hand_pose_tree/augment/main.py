# hand_pose_tree/augment/main.py

"""
Depuración de duplicados y aumento no rígido: perturbación de parámetros
cinemáticos y tamaños, deformación TPS 3D de la nube de la mano anclada con
puntos auxiliares, re-render por z-buffer, cierre morfológico y rotación en el
plano de la imagen.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import linalg, ndimage
from scipy.spatial.distance import cdist, pdist

from hand_pose_tree.depth_geometry import MISSING, DepthFrame, cloud_center, hand_cloud
from hand_pose_tree.errors import (
    ConfigError,
    HandPoseError,
    RejectedSampleError,
    SingularSystemError,
)
from hand_pose_tree.hand_model import (
    Joint,
    JointSet,
    forward_kinematics,
    hand_frame,
    inverse_kinematics,
    viewpoint_quaternion,
)
from hand_pose_tree.losses import classify_hand
from hand_pose_tree.synth_render import SceneSample, appearance_violation

# Anclas en el sistema de la mano (mm): 3 junto a la base del pulgar, 4 alrededor de la muñeca
THUMB_ANCHOR_OFFSETS = np.array([
    [0.0, 0.0, 15.0],
    [0.0, 0.0, -15.0],
    [10.6, -10.6, 0.0],
])
WRIST_ANCHOR_OFFSETS = np.array([
    [20.0, -25.0, 0.0],
    [-20.0, -25.0, 0.0],
    [0.0, -25.0, 15.0],
    [0.0, -25.0, -15.0],
])


class AugmentConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "scale_range": [0.85, 1.05],
                "angle_perturb_range": [-7.5, 7.5],
                "inplane_rotation_range": [-30.0, 30.0],
                "dedupe_threshold": 10.0,
                "seed": 0,
            }
        },
    )

    scale_range: tuple[float, float] = (0.85, 1.05)
    angle_perturb_range: tuple[float, float] = (-7.5, 7.5)
    inplane_rotation_range: tuple[float, float] = (-30.0, 30.0)
    global_scale_range: tuple[float, float] = (1.0, 1.0)
    nonrigid: bool = True
    dedupe_threshold: float = Field(10.0, gt=0.0)
    tps_regularization: float = Field(0.0, ge=0.0)
    max_redraws: int = Field(10, ge=0)
    # tolerancia del ground truth aumentado delante de la superficie re-renderizada (mm)
    max_appearance_violation_mm: float = Field(3.0, ge=0.0)
    seed: int = 0

    @model_validator(mode="after")
    def _ordered(self):
        for name in ("scale_range", "angle_perturb_range", "inplane_rotation_range", "global_scale_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"rango desordenado en {name}: {lo} > {hi}")
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "AugmentConfig":
        presets = {
            "A": {"inplane_rotation_range": (-30.0, 30.0)},
            "B": {"inplane_rotation_range": (-90.0, 90.0)},
            # sin deformación no rígida: escala global y rotación en el plano
            "standard": {
                "nonrigid": False,
                "scale_range": (1.0, 1.0),
                "angle_perturb_range": (0.0, 0.0),
                "global_scale_range": (0.9, 1.05),
                "inplane_rotation_range": (-90.0, 90.0),
            },
        }
        if name not in presets:
            raise ConfigError(f"preset de aumento desconocido '{name}' (A, B, standard)")
        return cls(**{**presets[name], **overrides})

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(scale_range=(1.0, 1.0), angle_perturb_range=(0.0, 0.0), inplane_rotation_range=(0.0, 0.0))


def max_joint_distance(a, b) -> float:
    """Ψ: máxima distancia euclídea entre articulaciones correspondientes."""
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1).max())


def dedupe(joint_sets, threshold: float = 10.0) -> list:
    """Índices conservados: recorrido voraz en orden, Ψ ≥ umbral contra todo lo conservado."""
    sets = [np.asarray(j.joints if isinstance(j, JointSet) else j, dtype=np.float64) for j in joint_sets]
    kept_idx = []
    kept = np.empty((len(sets), 20, 3))
    for i, j in enumerate(sets):
        n = len(kept_idx)
        if n:
            psi = np.linalg.norm(kept[:n] - j, axis=2).max(axis=1)
            if np.any(psi < threshold):
                continue
        kept[n] = j
        kept_idx.append(i)
    return kept_idx


def dedupe_samples(samples: list, threshold: float = 10.0) -> list:
    kept = dedupe([s.joints for s in samples], threshold)
    logger.info(f"[AUMENTO] Depuración: {len(kept)}/{len(samples)} muestras conservadas (Ψ ≥ {threshold} mm)")
    return [samples[i] for i in kept]


def auxiliary_points(joints) -> np.ndarray:
    """7 anclas (3 pulgar + 4 muñeca) a desplazamientos fijos en el sistema de la mano."""
    j = joints.joints if isinstance(joints, JointSet) else np.asarray(joints, dtype=np.float64)
    frame = hand_frame(j)
    thumb = frame.apply_inverse(j[Joint.THUMB_MCP])
    local = np.vstack([thumb + THUMB_ANCHOR_OFFSETS, WRIST_ANCHOR_OFFSETS])
    return frame.apply(local)


@dataclass(frozen=True)
class TpsWarp:
    source: np.ndarray
    weights: np.ndarray
    affine: np.ndarray
    regularization: float = 0.0

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        radial = cdist(p, self.source) @ self.weights
        return radial + np.hstack([np.ones((p.shape[0], 1)), p]) @ self.affine


def solve_tps(source, target, regularization: float = 0.0) -> TpsWarp:
    """TPS 3D con núcleo U(r) = r y parte afín, por eje."""
    src = np.asarray(source, dtype=np.float64)
    dst = np.asarray(target, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise SingularSystemError("puntos de control con formas incompatibles")
    n = src.shape[0]
    if n < 5:
        raise SingularSystemError(f"se necesitan al menos 5 puntos de control, hay {n}")
    if pdist(src).min() < 1e-9:
        raise SingularSystemError("puntos de control origen duplicados")
    affine_basis = np.hstack([np.ones((n, 1)), src])
    if np.linalg.matrix_rank(affine_basis) < 4:
        raise SingularSystemError("puntos de control coplanares")

    system = np.zeros((n + 4, n + 4))
    system[:n, :n] = cdist(src, src) + regularization * np.eye(n)
    system[:n, n:] = affine_basis
    system[n:, :n] = affine_basis.T
    rhs = np.zeros((n + 4, 3))
    rhs[:n] = dst
    try:
        solution = linalg.solve(system, rhs)
    except linalg.LinAlgError as e:
        raise SingularSystemError(f"sistema TPS singular: {e}") from e
    return TpsWarp(src, solution[:n], solution[n:], regularization)


@dataclass
class AugmentDraw:
    palm_scale: np.ndarray
    finger_scales: np.ndarray
    angle_offsets: np.ndarray
    global_scale: float
    rotation_deg: float

    @classmethod
    def sample(cls, rng: np.random.Generator, config: AugmentConfig) -> "AugmentDraw":
        lo, hi = config.scale_range
        a_lo, a_hi = config.angle_perturb_range
        return cls(
            palm_scale=rng.uniform(lo, hi, size=2),
            finger_scales=rng.uniform(lo, hi, size=5),
            angle_offsets=rng.uniform(a_lo, a_hi, size=(5, 4)),
            global_scale=float(rng.uniform(*config.global_scale_range)),
            rotation_deg=float(rng.uniform(*config.inplane_rotation_range)),
        )

    def is_identity(self) -> bool:
        return (np.all(self.palm_scale == 1.0) and np.all(self.finger_scales == 1.0)
                and np.all(self.angle_offsets == 0.0) and self.global_scale == 1.0 and self.rotation_deg == 0.0)

    def to_dict(self) -> dict:
        return {
            "palm_scale": [float(v) for v in self.palm_scale],
            "finger_scales": [float(v) for v in self.finger_scales],
            "angle_offsets": [[float(v) for v in row] for row in self.angle_offsets],
            "global_scale": self.global_scale,
            "rotation_deg": self.rotation_deg,
        }


def perturb_joints(joints: JointSet, draw: AugmentDraw) -> np.ndarray:
    """Articulaciones tras perturbar estiramiento, longitudes y ángulos."""
    params = inverse_kinematics(joints)
    perturbed = params.replace(
        palm_stretch=params.palm_stretch * draw.palm_scale,
        bone_lengths=params.bone_lengths * draw.finger_scales[:, None],
        joint_angles=params.joint_angles + draw.angle_offsets,
    )
    # delta sobre FK(IK(J)): exacto incluso si la pose está fuera de rango
    delta = forward_kinematics(perturbed).joints - forward_kinematics(params).joints
    return joints.joints + delta


def splat_points(points, camera, size) -> DepthFrame:
    """Re-render por z-buffer con splats de 1 píxel."""
    width, height = size
    uvz = camera.project(points)
    iu = np.floor(uvz[:, 0] + 0.5).astype(np.int64)
    iv = np.floor(uvz[:, 1] + 0.5).astype(np.int64)
    ok = (iu >= 0) & (iu < width) & (iv >= 0) & (iv < height)
    buffer = np.full(width * height, np.inf)
    np.minimum.at(buffer, iv[ok] * width + iu[ok], uvz[ok, 2])
    depth = np.where(np.isfinite(buffer), buffer, MISSING).reshape(height, width)
    return DepthFrame(depth)


def close_gaps(frame: DepthFrame) -> DepthFrame:
    """Cierre morfológico 3x3; los píxeles nuevos toman la media de sus vecinos de mano."""
    structure = np.ones((3, 3), dtype=bool)
    closed = ndimage.binary_closing(frame.mask, structure=structure)
    new = closed & ~frame.mask
    if not new.any():
        return frame
    weights = frame.mask.astype(np.float64)
    num = ndimage.uniform_filter(np.where(frame.mask, frame.depth, 0.0), size=3, mode="constant")
    den = ndimage.uniform_filter(weights, size=3, mode="constant")
    fill = new & (den > 0.0)
    depth = np.array(frame.depth)
    depth[fill] = num[fill] / den[fill]
    return DepthFrame(depth)


def rotate_in_plane(frame: DepthFrame, joints, camera, center_uv, angle_deg: float):
    """Rota imagen y articulaciones alrededor de ``center_uv``; la profundidad se conserva."""
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    center = np.asarray(center_uv, dtype=np.float64)

    # imagen: cada píxel de salida toma el de origen R^-1 (p - M) + M, vecino más próximo
    rows, cols = np.indices(frame.depth.shape, dtype=np.float64)
    out = np.stack([cols.ravel() - center[0], rows.ravel() - center[1]])
    src = rot.T @ out
    su = np.floor(src[0] + center[0] + 0.5).astype(np.int64)
    sv = np.floor(src[1] + center[1] + 0.5).astype(np.int64)
    ok = (su >= 0) & (su < frame.width) & (sv >= 0) & (sv < frame.height)
    depth = np.full(frame.depth.size, MISSING)
    depth[ok] = frame.depth[sv[ok], su[ok]]

    uvz = camera.project(joints)
    uv = (rot @ (uvz[:, :2] - center).T).T + center
    rotated = camera.backproject(np.column_stack([uv, uvz[:, 2]]))
    return DepthFrame(depth.reshape(frame.depth.shape)), rotated


def _inside_cube(joints, center, cube) -> bool:
    return bool(np.all(np.abs(np.asarray(joints) - center) <= cube / 2.0))


def deform_sample(sample: SceneSample, config: AugmentConfig, rng: np.random.Generator,
                  sample_id: Optional[int] = None) -> SceneSample:
    """
    Muestra aumentada. Las poses cuyas articulaciones salen del cubo, o cuyo ground
    truth queda delante de la superficie más de ``max_appearance_violation_mm``, se
    vuelven a sortear hasta ``max_redraws`` veces; después se rechaza la muestra.
    """
    camera = sample.camera
    size = (sample.frame.width, sample.frame.height)
    cloud = hand_cloud(sample.frame, camera)
    anchors = auxiliary_points(sample.joints)

    for attempt in range(config.max_redraws + 1):
        draw = AugmentDraw.sample(rng, config)
        if draw.is_identity():
            new_joints = sample.joints.joints.copy()
            warped = cloud
        else:
            new_joints = perturb_joints(sample.joints, draw) if config.nonrigid else sample.joints.joints.copy()
            if config.nonrigid:
                warp = solve_tps(np.vstack([sample.joints.joints, anchors]), np.vstack([new_joints, anchors]),
                                 config.tps_regularization)
                warped = warp.apply(cloud)
            else:
                warped = cloud
            if draw.global_scale != 1.0:
                pivot = cloud_center(warped)
                warped = pivot + draw.global_scale * (warped - pivot)
                new_joints = pivot + draw.global_scale * (new_joints - pivot)

        frame = close_gaps(splat_points(warped, camera, size))
        if frame.hand_pixels == 0:
            continue
        center = cloud_center(hand_cloud(frame, camera))
        if draw.rotation_deg != 0.0:
            pivot_uv = camera.project(center)[:2]
            frame, new_joints = rotate_in_plane(frame, new_joints, camera, pivot_uv, draw.rotation_deg)
            if frame.hand_pixels == 0:
                continue
            center = cloud_center(hand_cloud(frame, camera))
        if not _inside_cube(new_joints, center, sample.cube):
            logger.debug(f"[AUMENTO] intento {attempt}: articulaciones fuera del cubo, se vuelve a sortear")
            continue

        augmented = SceneSample(
            sample_id=sample.sample_id if sample_id is None else sample_id,
            frame=frame,
            joints=JointSet(new_joints),
            quaternion=viewpoint_quaternion(new_joints),
            camera=camera,
            center_world=center,
            center_image=camera.project(center),
            cube=sample.cube,
            finger_states=classify_hand(new_joints),
        )
        violation = float(appearance_violation(augmented).max())
        if violation > config.max_appearance_violation_mm:
            logger.debug(f"[AUMENTO] intento {attempt}: ground truth {violation:.2f} mm delante de la superficie, "
                         f"se vuelve a sortear")
            continue
        augmented.provenance = {
            "source_id": int(sample.sample_id),
            "redraws": attempt,
            "draw": draw.to_dict(),
            "appearance_violation_mm": violation,
        }
        return augmented
    raise RejectedSampleError(f"muestra {sample.sample_id}: sin aumento válido tras {config.max_redraws} intentos")


def _augment_job(args):
    sample, config, multiplier = args
    out = []
    for k in range(multiplier):
        rng = np.random.default_rng([config.seed, int(sample.sample_id), k])
        try:
            out.append(deform_sample(sample, config, rng))
        except HandPoseError as e:
            logger.warning(f"[AUMENTO] ⚠️ muestra {sample.sample_id} variante {k} descartada: {e}")
    return out


def generate_set(samples: list, config: AugmentConfig, multiplier: int, workers: int = 1) -> list:
    """``multiplier`` variantes por muestra de origen, deterministas dada la semilla."""
    if multiplier <= 0:
        raise ConfigError(f"el multiplicador debe ser > 0, recibido {multiplier}")
    jobs = [(s, config, multiplier) for s in samples]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            groups = list(pool.map(_augment_job, jobs))
    else:
        groups = [_augment_job(job) for job in jobs]

    augmented = []
    for group in groups:
        for s in group:
            s.sample_id = len(augmented)
            augmented.append(s)
    logger.info(f"[AUMENTO] ✅ {len(augmented)} muestras aumentadas a partir de {len(samples)} (x{multiplier})")
    return augmented


__all__ = [
    "AugmentConfig", "AugmentDraw", "TpsWarp", "auxiliary_points", "close_gaps", "dedupe", "dedupe_samples",
    "deform_sample", "generate_set", "max_joint_distance", "perturb_joints", "rotate_in_plane", "solve_tps",
    "splat_points",
]
