# hand_pose_tree/losses/gradcheck.py

"""Batería de comprobación por diferencias finitas de cada término de la pérdida."""

from __future__ import annotations

import numpy as np
from loguru import logger

from hand_pose_tree.depth_geometry import (
    MISSING,
    CameraModel,
    CropTransform,
    DepthFrame,
    estimate_normals,
    fill_background,
)
from hand_pose_tree.hand_model import (
    BRANCH_JOINTS,
    KinematicParams,
    forward_kinematics,
)
from hand_pose_tree.losses.main import (
    GLOBAL_HEAD,
    HEAD_SIZES,
    LOCAL_HEADS,
    VIEWPOINT_HEAD,
    FrameContext,
    GradCheckResult,
    LossConfig,
    LossTarget,
    appearance_loss,
    classify_finger,
    classify_hand,
    combined_loss,
    finger_dynamics,
    finite_difference_check,
    l2_loss,
)


def sphere_context(size: int = 32, radius: float = 60.0, cube: float = 200.0, distance: float = 600.0,
                   with_normals: bool = False) -> FrameContext:
    """
    Recorte sintético con una esfera centrada delante de un fondo en cono. Con
    ``with_normals`` lleva el mapa de normales estimado, como en entrenamiento.
    """
    cam = CameraModel.default(640, 480)
    xform = CropTransform.from_center([0.0, 0.0, distance], cube, (size, size), cam)
    pitch = xform.pixel_pitch
    rows, cols = np.indices((size, size), dtype=np.float64)
    x = (cols - size / 2.0) * pitch[0]
    y = (rows - size / 2.0) * pitch[1]
    r2 = x * x + y * y
    inside = r2 < radius * radius
    depth = np.where(inside, radius / 2.0 - np.sqrt(np.maximum(radius * radius - r2, 0.0)), MISSING)
    frame = DepthFrame(depth, mask=inside, mean_offset=distance, pixel_pitch=pitch)
    normals = estimate_normals(frame) if with_normals else None
    return FrameContext(fill_background(frame), xform, normals)


def _merge(results) -> GradCheckResult:
    results = list(results)
    return GradCheckResult(
        max(r.max_relative_error for r in results),
        sum(r.checked for r in results),
        sum(r.skipped for r in results),
    )


def _random_finger(rng) -> np.ndarray:
    """Cuádruple (A, B, C, D) con flexiones aleatorias en un plano girado."""
    angles = np.cumsum(rng.uniform(0.0, 60.0, size=3) * (rng.random(3) < 0.7))
    lengths = rng.uniform(15.0, 45.0, size=3)
    points = [np.zeros(3)]
    for theta, length in zip(np.radians(angles), lengths):
        points.append(points[-1] + length * np.array([0.0, np.cos(theta), -np.sin(theta)]))
    quad = np.array(points)
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, np.pi)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    rot = np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k
    return quad @ rot.T


def _random_hand(rng) -> np.ndarray:
    angles = np.zeros((5, 4))
    angles[:, 0] = rng.uniform(-10.0, 10.0, size=5)
    angles[:, 1:] = rng.uniform(0.0, 60.0, size=(5, 3))
    params = KinematicParams.reference().replace(joint_angles=angles)
    joints = forward_kinematics(params).joints
    return joints - joints.mean(axis=0)


def _as_pair(result):
    return result.value, result.gradient


def check_l2(rng, configurations: int, eps: float) -> GradCheckResult:
    results = []
    for _ in range(configurations):
        truth = rng.normal(scale=20.0, size=(8, 3))
        point = truth + rng.normal(scale=5.0, size=truth.shape)
        results.append(finite_difference_check(lambda x: l2_loss(x, truth), point, eps))
    return _merge(results)


def check_appearance(rng, configurations: int, eps: float, with_normals: bool = False) -> GradCheckResult:
    ctx = sphere_context(with_normals=with_normals)
    results = []
    for _ in range(configurations):
        xy = rng.uniform(-30.0, 30.0, size=(8, 2))
        z = rng.uniform(-60.0, 20.0, size=(8, 1))
        point = np.hstack([xy, z])
        results.append(finite_difference_check(lambda x: _as_pair(appearance_loss(x, ctx)), point, eps))
    return _merge(results)


def check_dynamics(rng, configurations: int, eps: float, config: LossConfig | None = None) -> GradCheckResult:
    config = config or LossConfig()
    results = []
    for _ in range(configurations):
        truth = _random_finger(rng)
        state = classify_finger(*truth, kappa_factor=config.kappa_factor, bend_tol_deg=config.bend_tol_deg)
        point = truth + rng.normal(scale=4.0, size=truth.shape)

        def fn(x, state=state):
            return _as_pair(finger_dynamics(x, state, config.rho, config.mu, config.kappa_factor))

        results.append(finite_difference_check(fn, point, eps))
    return _merge(results)


def check_combined(rng, configurations: int, eps: float, config: LossConfig | None = None,
                   with_normals: bool = False) -> GradCheckResult:
    config = config or LossConfig()
    ctx = sphere_context(with_normals=with_normals)
    heads = list(LOCAL_HEADS.values()) + [VIEWPOINT_HEAD, GLOBAL_HEAD]
    results = []
    for _ in range(configurations):
        truth = _random_hand(rng) * 0.5
        target = LossTarget(truth, np.array([1.0, 0.0, 0.0, 0.0]), classify_hand(truth))
        parts = []
        for finger, head in LOCAL_HEADS.items():
            parts.append(truth[list(BRANCH_JOINTS[finger])].reshape(-1))
        parts.append(target.quaternion)
        parts.append(truth.reshape(-1))
        # el cuaternión se perturba mucho menos que las articulaciones (mm)
        noise = [rng.normal(scale=0.003 if p.size == 4 else 3.0, size=p.size) for p in parts]
        point = np.concatenate(parts) + np.concatenate(noise)

        def fn(x):
            outputs, offset = {}, 0
            for head in heads:
                outputs[head] = x[offset:offset + HEAD_SIZES[head]]
                offset += HEAD_SIZES[head]
            report = combined_loss(outputs, target, ctx, config)
            return report.total, np.concatenate([report.gradients[h] for h in heads])

        results.append(finite_difference_check(fn, point, eps))
    return _merge(results)


def run_suite(seed: int = 0, configurations: int = 100, eps: float = 1e-6) -> dict:
    """Ejecuta todas las comprobaciones de pérdidas; devuelve nombre -> GradCheckResult."""
    rng = np.random.default_rng(seed)
    results = {
        "l2": check_l2(rng, configurations, eps),
        "appearance": check_appearance(rng, configurations, eps),
        "dynamics": check_dynamics(rng, configurations, eps),
        "combined": check_combined(rng, max(1, configurations // 20), eps),
        "appearance_normals": check_appearance(rng, configurations, eps, with_normals=True),
        "combined_normals": check_combined(rng, max(1, configurations // 20), eps, with_normals=True),
    }
    for name, r in results.items():
        logger.info(f"[GRADCHECK] {name}: error relativo máx {r.max_relative_error:.2e} "
                    f"({r.checked} coordenadas, {r.skipped} en bisagra)")
    return results


__all__ = ["run_suite", "sphere_context", "check_l2", "check_appearance", "check_dynamics", "check_combined"]
