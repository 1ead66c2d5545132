# hand_pose_tree/hand_model/main.py

"""
Modelo de mano de 20 articulaciones: orden canónico, partición palma/dedos,
sistema de referencia de la mano, cinemática directa/inversa y cuaterniones
de punto de vista de la palma.

Convenciones (ver README):
- Orden canónico de ``Joint``: muñeca, 4 MCP (índice..meñique), PIP/DIP/TIP de
  índice, corazón, anular y meñique, y MCP/IP/TIP del pulgar.
- Pose de referencia: mano abierta en el plano z=0, dedos hacia +y y pulgar con
  45° de abducción hacia +x. Todas las unidades en milímetros.
- Cuaterniones en orden (w, x, y, z).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from hand_pose_tree.errors import (
    DegeneratePalmError,
    InvalidParameterError,
    ShapeMismatchError,
    ZeroLengthBoneError,
    ZeroQuaternionError,
)


class Joint(IntEnum):
    WRIST = 0
    INDEX_MCP = 1
    MIDDLE_MCP = 2
    RING_MCP = 3
    PINKY_MCP = 4
    INDEX_PIP = 5
    INDEX_DIP = 6
    INDEX_TIP = 7
    MIDDLE_PIP = 8
    MIDDLE_DIP = 9
    MIDDLE_TIP = 10
    RING_PIP = 11
    RING_DIP = 12
    RING_TIP = 13
    PINKY_PIP = 14
    PINKY_DIP = 15
    PINKY_TIP = 16
    THUMB_MCP = 17
    THUMB_IP = 18
    THUMB_TIP = 19


N_JOINTS = 20
LAYOUT_TAG = "tree20-v1"

PALM_JOINTS = (Joint.WRIST, Joint.INDEX_MCP, Joint.MIDDLE_MCP, Joint.RING_MCP, Joint.PINKY_MCP)

FINGERS = ("index", "middle", "ring", "pinky", "thumb")
DYNAMICS_FINGERS = ("index", "middle", "ring", "pinky")

# Cadena de cada dedo: (raíz, articulaciones en orden proximal -> distal).
# El pulgar cuelga de la muñeca.
CHAINS = {
    "index": (Joint.INDEX_MCP, (Joint.INDEX_PIP, Joint.INDEX_DIP, Joint.INDEX_TIP)),
    "middle": (Joint.MIDDLE_MCP, (Joint.MIDDLE_PIP, Joint.MIDDLE_DIP, Joint.MIDDLE_TIP)),
    "ring": (Joint.RING_MCP, (Joint.RING_PIP, Joint.RING_DIP, Joint.RING_TIP)),
    "pinky": (Joint.PINKY_MCP, (Joint.PINKY_PIP, Joint.PINKY_DIP, Joint.PINKY_TIP)),
    "thumb": (Joint.WRIST, (Joint.THUMB_MCP, Joint.THUMB_IP, Joint.THUMB_TIP)),
}

# Pose local de cada rama: 5 de palma + 3 del dedo = 8 articulaciones (24 valores)
BRANCH_JOINTS = {finger: tuple(PALM_JOINTS) + CHAINS[finger][1] for finger in FINGERS}

FINGERTIPS = (Joint.INDEX_TIP, Joint.MIDDLE_TIP, Joint.RING_TIP, Joint.PINKY_TIP, Joint.THUMB_TIP)

REFERENCE_PALM = np.array([
    [0.0, 0.0, 0.0],
    [22.0, 88.0, 0.0],
    [0.0, 92.0, 0.0],
    [-20.0, 86.0, 0.0],
    [-38.0, 76.0, 0.0],
])

# Longitudes (mm) por cadena: índice, corazón, anular, meñique, pulgar
REFERENCE_BONE_LENGTHS = np.array([
    [40.0, 24.0, 20.0],
    [45.0, 28.0, 21.0],
    [42.0, 26.0, 21.0],
    [33.0, 19.0, 18.0],
    [55.0, 32.0, 28.0],
])

REST_ABDUCTION_DEG = np.array([0.0, 0.0, 0.0, 0.0, 45.0])

_PALM_UP = np.array([0.0, 0.0, 1.0])
_MIN_STRETCH = 1e-3


def finger_quadruple(finger: str) -> tuple[int, int, int, int]:
    """Índices (A, B, C, D) de un dedo para la pérdida de dinámica."""
    root, chain = CHAINS[finger]
    return (int(root),) + tuple(int(j) for j in chain)


def _readonly(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64)
    out.setflags(write=False)
    return out


def _wrap_deg(angle):
    return (np.asarray(angle) + 180.0) % 360.0 - 180.0


@dataclass(frozen=True)
class Quaternion:
    w: float
    x: float
    y: float
    z: float

    @classmethod
    def identity(cls) -> "Quaternion":
        return cls(1.0, 0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, values) -> "Quaternion":
        arr = np.asarray(values, dtype=np.float64).reshape(-1)
        if arr.shape != (4,):
            raise ShapeMismatchError(f"un cuaternión tiene 4 componentes, recibidas {arr.size}")
        return cls(*(float(v) for v in arr))

    @classmethod
    def from_matrix(cls, rotation) -> "Quaternion":
        x, y, z, w = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
        return cls(float(w), float(x), float(y), float(z)).canonical()

    def as_array(self) -> np.ndarray:
        return np.array([self.w, self.x, self.y, self.z])

    def norm(self) -> float:
        return float(np.linalg.norm(self.as_array()))

    def normalized(self) -> "Quaternion":
        n = self.norm()
        if n < 1e-12:
            raise ZeroQuaternionError(f"cuaternión de norma {n:.3e}")
        return Quaternion.from_array(self.as_array() / n)

    def canonical(self) -> "Quaternion":
        """Normaliza al hemisferio w >= 0 (q y -q son la misma rotación)."""
        q = self.normalized()
        return q if q.w >= 0.0 else Quaternion(-q.w, -q.x, -q.y, -q.z)

    def __mul__(self, other: "Quaternion") -> "Quaternion":
        # Producto de Hamilton: (self * other) aplica primero `other`
        a = self.as_array()
        b = other.as_array()
        return Quaternion(
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        )


def _as_quaternion(q) -> Quaternion:
    return q if isinstance(q, Quaternion) else Quaternion.from_array(q)


def quaternion_to_matrix(q) -> np.ndarray:
    """Matriz de rotación 3x3 de un cuaternión (normalizado internamente)."""
    q = _as_quaternion(q).normalized()
    return Rotation.from_quat([q.x, q.y, q.z, q.w]).as_matrix()


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation", _readonly(self.rotation))
        object.__setattr__(self, "translation", _readonly(self.translation))
        if self.rotation.shape != (3, 3) or self.translation.shape != (3,):
            raise ShapeMismatchError("transformación rígida con forma inválida")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def apply_inverse(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.translation) @ self.rotation

    @property
    def quaternion(self) -> Quaternion:
        return Quaternion.from_matrix(self.rotation)


@dataclass(frozen=True)
class JointSet:
    joints: np.ndarray
    layout: str = LAYOUT_TAG

    def __post_init__(self):
        arr = _readonly(self.joints)
        if arr.shape != (N_JOINTS, 3):
            raise ShapeMismatchError(f"se esperaban 20 articulaciones (20, 3), recibido {arr.shape}")
        if self.layout != LAYOUT_TAG:
            raise ShapeMismatchError(f"layout desconocido '{self.layout}'")
        object.__setattr__(self, "joints", arr)

    def __getitem__(self, joint) -> np.ndarray:
        return self.joints[joint]

    @property
    def palm(self) -> np.ndarray:
        return self.joints[list(PALM_JOINTS)]

    def branch(self, finger: str) -> np.ndarray:
        """Las 8 articulaciones de la pose local de una rama."""
        return self.joints[list(BRANCH_JOINTS[finger])]

    def local_pose(self, finger: str) -> np.ndarray:
        return self.branch(finger).reshape(-1)

    def transformed(self, transform: RigidTransform) -> "JointSet":
        return JointSet(transform.apply(self.joints), self.layout)

    def translated(self, offset) -> "JointSet":
        return JointSet(self.joints + np.asarray(offset, dtype=np.float64), self.layout)


def _as_joints(joints) -> np.ndarray:
    if isinstance(joints, JointSet):
        return joints.joints
    arr = np.asarray(joints, dtype=np.float64)
    if arr.shape != (N_JOINTS, 3):
        raise ShapeMismatchError(f"se esperaban 20 articulaciones (20, 3), recibido {arr.shape}")
    return arr


@dataclass(frozen=True)
class KinematicParams:
    """
    Parámetros cinemáticos en el sistema de la mano.

    ``joint_angles`` es (5, 4) en grados: [abducción, flexión1, flexión2, flexión3]
    por cadena (índice, corazón, anular, meñique, pulgar). Para el pulgar la primera
    pareja son los ángulos de su raíz y las flexiones son MCP e IP. La abducción se
    mide respecto a la de reposo (45° en el pulgar).
    """

    palm_rotation: Quaternion
    palm_translation: np.ndarray
    palm_stretch: np.ndarray
    bone_lengths: np.ndarray
    joint_angles: np.ndarray
    palm_residual: np.ndarray = field(default_factory=lambda: np.zeros((5, 3)))
    out_of_range: bool = False

    def __post_init__(self):
        object.__setattr__(self, "palm_rotation", _as_quaternion(self.palm_rotation))
        for name, shape in (("palm_translation", (3,)), ("palm_stretch", (2,)), ("bone_lengths", (5, 3)),
                            ("joint_angles", (5, 4)), ("palm_residual", (5, 3))):
            arr = _readonly(getattr(self, name))
            if arr.shape != shape:
                raise ShapeMismatchError(f"{name}: se esperaba {shape}, recibido {arr.shape}")
            object.__setattr__(self, name, arr)
        if np.any(self.bone_lengths <= 0.0):
            raise ZeroLengthBoneError("todas las longitudes de hueso deben ser > 0")
        if np.any(self.palm_stretch <= 0.0):
            raise InvalidParameterError("el estiramiento de palma debe ser > 0")

    @classmethod
    def reference(cls, translation=(0.0, 0.0, 0.0)) -> "KinematicParams":
        return cls(
            palm_rotation=Quaternion.identity(),
            palm_translation=np.asarray(translation, dtype=np.float64),
            palm_stretch=np.ones(2),
            bone_lengths=REFERENCE_BONE_LENGTHS,
            joint_angles=np.zeros((5, 4)),
        )

    @property
    def palm_frame(self) -> RigidTransform:
        return RigidTransform(quaternion_to_matrix(self.palm_rotation), self.palm_translation)

    def replace(self, **changes) -> "KinematicParams":
        return replace(self, **changes)


def hand_frame(joints) -> RigidTransform:
    """
    Sistema de la mano: origen en la muñeca, z normal al plano de la palma
    (muñeca, MCP índice, MCP meñique), y hacia la MCP del corazón proyectada sobre
    ese plano, y x = y × z, del lado del pulgar.
    """
    j = _as_joints(joints)
    wrist = j[Joint.WRIST]
    a = j[Joint.INDEX_MCP] - wrist
    b = j[Joint.PINKY_MCP] - wrist
    normal = np.cross(a, b)
    scale = np.linalg.norm(a) * np.linalg.norm(b)
    if scale < 1e-12 or np.linalg.norm(normal) <= 1e-9 * scale:
        raise DegeneratePalmError("muñeca, MCP índice y MCP meñique son colineales")
    z_axis = normal / np.linalg.norm(normal)

    m = j[Joint.MIDDLE_MCP] - wrist
    y_axis = m - np.dot(m, z_axis) * z_axis
    if np.linalg.norm(y_axis) <= 1e-9 * max(np.linalg.norm(m), 1e-12):
        raise DegeneratePalmError("la MCP del corazón es perpendicular al plano de la palma")
    y_axis = y_axis / np.linalg.norm(y_axis)
    x_axis = np.cross(y_axis, z_axis)
    return RigidTransform(np.column_stack([x_axis, y_axis, z_axis]), wrist.copy())


def _finger_direction(abduction_rad: float) -> np.ndarray:
    return np.array([math.sin(abduction_rad), math.cos(abduction_rad), 0.0])


def forward_kinematics(params: KinematicParams) -> JointSet:
    """Reconstruye las 20 articulaciones a partir de los parámetros cinemáticos."""
    local = np.zeros((N_JOINTS, 3))
    stretch = np.array([params.palm_stretch[0], params.palm_stretch[1], 1.0])
    local[list(PALM_JOINTS)] = REFERENCE_PALM * stretch + params.palm_residual

    for c, finger in enumerate(FINGERS):
        root, chain = CHAINS[finger]
        abduction = math.radians(REST_ABDUCTION_DEG[c] + params.joint_angles[c, 0])
        direction = _finger_direction(abduction)
        position = local[root].copy()
        theta = 0.0
        for k, joint in enumerate(chain):
            # flexión acumulada hacia -z (lado palmar)
            theta += math.radians(params.joint_angles[c, k + 1])
            segment = math.cos(theta) * direction - math.sin(theta) * _PALM_UP
            position = position + params.bone_lengths[c, k] * segment
            local[joint] = position

    return JointSet(params.palm_frame.apply(local))


def inverse_kinematics(joints) -> KinematicParams:
    """
    Recupera los parámetros cinemáticos de un conjunto de articulaciones.

    Para poses fuera de la parametrización (segmentos fuera del plano del dedo,
    estiramiento no positivo) devuelve los parámetros representables más cercanos
    con ``out_of_range=True``.
    """
    j = _as_joints(joints)
    frame = hand_frame(j)
    local = frame.apply_inverse(j)
    out_of_range = False

    palm_local = local[list(PALM_JOINTS)]
    stretch = np.empty(2)
    for axis in (0, 1):
        ref = REFERENCE_PALM[:, axis]
        stretch[axis] = float(np.dot(palm_local[:, axis], ref) / np.dot(ref, ref))
    if np.any(stretch < _MIN_STRETCH):
        out_of_range = True
        stretch = np.maximum(stretch, _MIN_STRETCH)
    residual = palm_local - REFERENCE_PALM * np.array([stretch[0], stretch[1], 1.0])

    lengths = np.zeros((5, 3))
    angles = np.zeros((5, 4))
    for c, finger in enumerate(FINGERS):
        root, chain = CHAINS[finger]
        points = local[[root, *chain]]
        segments = np.diff(points, axis=0)
        seg_lengths = np.linalg.norm(segments, axis=1)
        if np.any(seg_lengths < 1e-6):
            raise ZeroLengthBoneError(f"segmento de longitud nula en el dedo '{finger}'")

        horizontal = segments[:, :2]
        k = int(np.argmax(np.linalg.norm(horizontal, axis=1)))
        h_norm = float(np.linalg.norm(horizontal[k]))
        if h_norm <= 1e-9 * seg_lengths[k]:
            # dedo completamente perpendicular a la palma: abducción indeterminada
            abduction = math.radians(REST_ABDUCTION_DEG[c])
            out_of_range = True
        else:
            d2 = horizontal[k] / h_norm
            if d2[1] < 0.0:
                d2 = -d2
            abduction = math.atan2(d2[0], d2[1])

        direction = _finger_direction(abduction)
        lateral = np.cross(direction, _PALM_UP)
        if np.any(np.abs(segments @ lateral) > 1e-6 * seg_lengths):
            out_of_range = True

        cumulative = np.degrees(np.arctan2(-(segments @ _PALM_UP), segments @ direction))
        angles[c, 0] = _wrap_deg(math.degrees(abduction) - REST_ABDUCTION_DEG[c])
        angles[c, 1:] = _wrap_deg(np.diff(np.concatenate([[0.0], cumulative])))
        lengths[c] = seg_lengths

    if out_of_range:
        logger.debug("[MANO] pose fuera de la parametrización, se devuelve la más cercana")

    return KinematicParams(
        palm_rotation=Quaternion.from_matrix(frame.rotation),
        palm_translation=frame.translation,
        palm_stretch=stretch,
        bone_lengths=lengths,
        joint_angles=angles,
        palm_residual=residual,
        out_of_range=out_of_range,
    )


def palm_from_viewpoint(q, reference_palm=REFERENCE_PALM, wrist=None) -> np.ndarray:
    """Palma de referencia (centrada en su muñeca) rotada por q y, opcionalmente, trasladada."""
    rotation = quaternion_to_matrix(q)
    ref = np.asarray(reference_palm, dtype=np.float64)
    if ref.shape != (5, 3):
        raise ShapeMismatchError(f"la palma de referencia es (5, 3), recibido {ref.shape}")
    palm = (ref - ref[0]) @ rotation.T
    if wrist is not None:
        palm = palm + np.asarray(wrist, dtype=np.float64)
    return palm


def viewpoint_quaternion(joints) -> Quaternion:
    """Rotación entre la vista de referencia y la palma observada (hemisferio w >= 0)."""
    return Quaternion.from_matrix(hand_frame(joints).rotation)


REFERENCE_JOINTS = forward_kinematics(KinematicParams.reference())


def reference_pose_table() -> dict:
    return {
        "layout": LAYOUT_TAG,
        "units": "mm",
        "joints": {joint.name.lower(): [float(v) for v in REFERENCE_JOINTS[joint]] for joint in Joint},
    }


def write_reference_pose(path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(reference_pose_table(), f, indent=2)
        f.write("\n")
