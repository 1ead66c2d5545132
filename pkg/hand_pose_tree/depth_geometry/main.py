# hand_pose_tree/depth_geometry/main.py

"""
Geometría de profundidad: cámara pinhole, recorte centrado en la nube de la mano
con su transformación (u, v, z), fondo en cono, normales de superficie y muestreo
diferenciable de la imagen de profundidad.

Convenciones:
- El índice de píxel i corresponde a la coordenada continua i (columna = u, fila = v).
- Las profundidades en bruto usan 0 como marcador de píxel ausente.
- Normal de superficie s ∝ (∂ℐ/∂x, ∂ℐ/∂y, 1) con x, y en mm sobre el plano imagen,
  de modo que ∂ℐ/∂u = s^x / s^z · paso_x.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from loguru import logger
from scipy import ndimage

from hand_pose_tree.errors import (
    BehindCameraError,
    EmptyFrameError,
    InvalidParameterError,
    ShapeMismatchError,
)

MISSING = 0.0
CONE_SLOPE = 5.0
CONE_OFFSET = 100.0
MIN_NORMAL_Z = 0.05

RAW_MISSING = "raw-missing"
CONE_FILLED = "cone-filled"


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    px: float
    py: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidParameterError(f"focales no positivas: fx={self.fx}, fy={self.fy}")

    @classmethod
    def default(cls, width: int, height: int, focal: float = 588.0) -> "CameraModel":
        return cls(focal, focal, width / 2.0, height / 2.0)

    def project(self, points) -> np.ndarray:
        """Puntos de cámara (..., 3) en mm -> (..., 3) con (u, v, z)."""
        p = np.asarray(points, dtype=np.float64)
        z = p[..., 2]
        if np.any(z <= 0.0):
            raise BehindCameraError("punto detrás de la cámara")
        u = self.fx * p[..., 0] / z + self.px
        v = self.fy * p[..., 1] / z + self.py
        return np.stack([u, v, z], axis=-1)

    def backproject(self, uvz) -> np.ndarray:
        q = np.asarray(uvz, dtype=np.float64)
        z = q[..., 2]
        x = (q[..., 0] - self.px) * z / self.fx
        y = (q[..., 1] - self.py) * z / self.fy
        return np.stack([x, y, z], axis=-1)

    def as_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "px": self.px, "py": self.py}


@dataclass(frozen=True)
class DepthFrame:
    depth: np.ndarray
    mode: str = RAW_MISSING
    mask: np.ndarray | None = None
    mean_offset: float | None = None
    pixel_pitch: tuple = (1.0, 1.0)
    cone_offset: float = CONE_OFFSET

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64)
        if depth.ndim != 2:
            raise ShapeMismatchError(f"la profundidad debe ser 2D, recibido {depth.shape}")
        if self.mode not in (RAW_MISSING, CONE_FILLED):
            raise InvalidParameterError(f"modo de fondo desconocido '{self.mode}'")
        if self.mask is None:
            if self.mode == CONE_FILLED:
                raise InvalidParameterError("un frame con cono necesita máscara de mano")
            mask = depth != MISSING
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != depth.shape:
                raise ShapeMismatchError("máscara y profundidad con formas distintas")
        depth.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "mask", mask)
        object.__setattr__(self, "pixel_pitch", (float(self.pixel_pitch[0]), float(self.pixel_pitch[1])))

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def hand_pixels(self) -> int:
        return int(self.mask.sum())

    def absolute_depth(self) -> np.ndarray:
        """Profundidad en mm de cámara (deshace el desplazamiento de media), 0 fuera de la mano."""
        offset = self.mean_offset or 0.0
        return np.where(self.mask, self.depth + offset, MISSING)


@dataclass(frozen=True)
class SurfaceNormalMap:
    normals: np.ndarray

    @property
    def shape(self) -> tuple:
        return self.normals.shape[:2]


@dataclass(frozen=True)
class CropTransform:
    """
    Recorte de cubo c centrado en la nube de la mano, redimensionado a (w, h).

    ``center_image`` = (M^u, M^v, M^z) en la imagen completa; la transformación
    lleva puntos de media cero (mm) a coordenadas continuas del recorte.
    """

    center_world: np.ndarray
    center_image: np.ndarray
    cube: float
    size: tuple
    camera: CameraModel

    scale_x: float = field(init=False)
    scale_y: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "center_world", np.array(self.center_world, dtype=np.float64))
        object.__setattr__(self, "center_image", np.array(self.center_image, dtype=np.float64))
        object.__setattr__(self, "size", (int(self.size[0]), int(self.size[1])))
        if self.cube <= 0:
            raise InvalidParameterError(f"tamaño de cubo no positivo: {self.cube}")
        mz = self.center_world[2]
        if mz <= 0:
            raise BehindCameraError("el centro de la nube está detrás de la cámara")
        w, h = self.size
        object.__setattr__(self, "scale_x", w * mz / (self.cube * self.camera.fx))
        object.__setattr__(self, "scale_y", h * mz / (self.cube * self.camera.fy))

    @classmethod
    def from_center(cls, center_world, cube: float, size, camera: CameraModel) -> "CropTransform":
        center_world = np.asarray(center_world, dtype=np.float64)
        center_image = camera.project(center_world)
        return cls(center_world, center_image, float(cube), tuple(size), camera)

    @property
    def pixel_pitch(self) -> tuple:
        w, h = self.size
        return (self.cube / w, self.cube / h)

    def as_camera(self) -> CameraModel:
        """Cámara equivalente cuyo plano imagen es el propio recorte."""
        w, h = self.size
        mu, mv = self.center_image[:2]
        return CameraModel(
            fx=self.scale_x * self.camera.fx,
            fy=self.scale_y * self.camera.fy,
            px=(self.camera.px - mu) * self.scale_x + w / 2.0,
            py=(self.camera.py - mv) * self.scale_y + h / 2.0,
        )

    def image_to_crop(self, u, v):
        w, h = self.size
        mu, mv = self.center_image[:2]
        return (np.asarray(u) - mu) * self.scale_x + w / 2.0, (np.asarray(v) - mv) * self.scale_y + h / 2.0

    def crop_to_image(self, u, v):
        w, h = self.size
        mu, mv = self.center_image[:2]
        return (np.asarray(u) - w / 2.0) / self.scale_x + mu, (np.asarray(v) - h / 2.0) / self.scale_y + mv

    def to_dict(self) -> dict:
        return {
            "cloud_center_world": [float(v) for v in self.center_world],
            "cloud_center_image": [float(v) for v in self.center_image],
            "cube_mm": float(self.cube),
            "size": list(self.size),
        }


def project_joint(j_world, xform: CropTransform, cam: CameraModel | None = None) -> np.ndarray:
    """Punto(s) de media cero (..., 3) en mm -> (u, v, z) continuos del recorte."""
    cam = cam or xform.camera
    j = np.asarray(j_world, dtype=np.float64)
    mx, my, mz = xform.center_world
    mu, mv = xform.center_image[:2]
    w, h = xform.size
    depth = j[..., 2] + mz
    if np.any(depth <= 0.0):
        raise BehindCameraError("articulación detrás de la cámara")
    u = (cam.fx * (j[..., 0] + mx) / depth + cam.px - mu) * xform.scale_x + w / 2.0
    v = (cam.fy * (j[..., 1] + my) / depth + cam.py - mv) * xform.scale_y + h / 2.0
    return np.stack([u, v, j[..., 2]], axis=-1)


def projection_jacobian(j_world, xform: CropTransform, cam: CameraModel | None = None) -> np.ndarray:
    """Jacobiano (..., 2, 3) de (u, v) respecto a (x, y, z)."""
    cam = cam or xform.camera
    j = np.asarray(j_world, dtype=np.float64)
    mx, my, mz = xform.center_world
    depth = j[..., 2] + mz
    if np.any(depth <= 0.0):
        raise BehindCameraError("articulación detrás de la cámara")
    ax = xform.scale_x * cam.fx / depth
    ay = xform.scale_y * cam.fy / depth
    jac = np.zeros(j.shape[:-1] + (2, 3))
    jac[..., 0, 0] = ax
    jac[..., 0, 2] = -ax * (j[..., 0] + mx) / depth
    jac[..., 1, 1] = ay
    jac[..., 1, 2] = -ay * (j[..., 1] + my) / depth
    return jac


def backproject(uvz, xform: CropTransform, cam: CameraModel | None = None) -> np.ndarray:
    cam = cam or xform.camera
    q = np.asarray(uvz, dtype=np.float64)
    mx, my, mz = xform.center_world
    mu, mv = xform.center_image[:2]
    w, h = xform.size
    depth = q[..., 2] + mz
    x = ((q[..., 0] - w / 2.0) / xform.scale_x + mu - cam.px) * depth / cam.fx - mx
    y = ((q[..., 1] - h / 2.0) / xform.scale_y + mv - cam.py) * depth / cam.fy - my
    return np.stack([x, y, q[..., 2]], axis=-1)


def cone_background(u, v, w: int, h: int, offset: float = CONE_OFFSET):
    return CONE_SLOPE * np.hypot(np.asarray(u, dtype=np.float64) - 0.5 * w,
                                 np.asarray(v, dtype=np.float64) - 0.5 * h) + offset


def cone_gradient(u, v, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    du = np.asarray(u, dtype=np.float64) - 0.5 * w
    dv = np.asarray(v, dtype=np.float64) - 0.5 * h
    r = np.hypot(du, dv)
    safe = np.where(r > 0.0, r, 1.0)
    return (np.where(r > 0.0, CONE_SLOPE * du / safe, 0.0),
            np.where(r > 0.0, CONE_SLOPE * dv / safe, 0.0))


def fill_background(frame: DepthFrame, offset: float = CONE_OFFSET) -> DepthFrame:
    """Sustituye todo píxel fuera de la mano por el cono; la mano queda intacta."""
    if frame.hand_pixels == 0:
        raise EmptyFrameError("el frame no tiene píxeles de mano")
    rows, cols = np.indices(frame.depth.shape, dtype=np.float64)
    cone = cone_background(cols, rows, frame.width, frame.height, offset)
    return DepthFrame(
        depth=np.where(frame.mask, frame.depth, cone),
        mode=CONE_FILLED,
        mask=frame.mask,
        mean_offset=frame.mean_offset,
        pixel_pitch=frame.pixel_pitch,
        cone_offset=offset,
    )


def hand_cloud(frame: DepthFrame, cam: CameraModel) -> np.ndarray:
    """Nube de puntos (N, 3) en mm de cámara de los píxeles de mano."""
    rows, cols = np.nonzero(frame.mask)
    if rows.size == 0:
        raise EmptyFrameError("el frame no tiene píxeles de mano")
    z = frame.absolute_depth()[rows, cols]
    return cam.backproject(np.stack([cols.astype(np.float64), rows.astype(np.float64), z], axis=-1))


def cloud_center(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.size == 0:
        raise EmptyFrameError("nube de puntos vacía")
    return pts.mean(axis=0)


def crop_and_normalize(frame: DepthFrame, cam: CameraModel, center_world, cube: float,
                       size=(96, 96)) -> tuple[DepthFrame, CropTransform]:
    """
    Recorta el cubo centrado en ``center_world``, redimensiona por vecino más
    próximo a ``size`` y resta M^z: la mano queda con profundidad de media cero.
    """
    if frame.hand_pixels == 0:
        raise EmptyFrameError("el frame no tiene píxeles de mano")
    xform = CropTransform.from_center(center_world, cube, size, cam)
    w, h = xform.size
    out_v, out_u = np.indices((h, w), dtype=np.float64)
    src_u, src_v = xform.crop_to_image(out_u, out_v)
    iu = np.floor(src_u + 0.5).astype(np.int64)
    iv = np.floor(src_v + 0.5).astype(np.int64)
    inside = (iu >= 0) & (iu < frame.width) & (iv >= 0) & (iv < frame.height)

    absolute = frame.absolute_depth()
    sampled = np.zeros((h, w))
    hand = np.zeros((h, w), dtype=bool)
    sampled[inside] = absolute[iv[inside], iu[inside]]
    hand[inside] = frame.mask[iv[inside], iu[inside]]

    mz = xform.center_world[2]
    hand &= np.abs(sampled - mz) <= cube / 2.0
    if not hand.any():
        raise EmptyFrameError("ningún píxel de mano dentro del cubo")

    crop = DepthFrame(
        depth=np.where(hand, sampled - mz, MISSING),
        mode=RAW_MISSING,
        mask=hand,
        mean_offset=float(mz),
        pixel_pitch=xform.pixel_pitch,
    )
    logger.debug(f"[GEOMETRIA] recorte {w}x{h}, cubo {cube} mm, {int(hand.sum())} píxeles de mano")
    return crop, xform


def network_input(frame: DepthFrame, cube: float) -> np.ndarray:
    """Entrada de red: profundidad/(c/2) recortada a [-1, 1]; píxeles ausentes a +1."""
    half = cube / 2.0
    scaled = np.clip(frame.depth / half, -1.0, 1.0)
    return np.where(frame.mask, scaled, 1.0)


def estimate_normals(frame: DepthFrame) -> SurfaceNormalMap:
    """
    Normales por diferencias centrales sobre la profundidad suavizada con caja 3x3
    enmascarada; en el borde de la mano se usan diferencias laterales.
    """
    mask = frame.mask
    weights = mask.astype(np.float64)
    num = ndimage.uniform_filter(np.where(mask, frame.depth, 0.0), size=3, mode="constant", cval=0.0)
    den = ndimage.uniform_filter(weights, size=3, mode="constant", cval=0.0)
    smooth = np.where(den > 0.0, num / np.where(den > 0.0, den, 1.0), 0.0)

    gx = _masked_difference(smooth, mask, axis=1) / frame.pixel_pitch[0]
    gy = _masked_difference(smooth, mask, axis=0) / frame.pixel_pitch[1]
    normals = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    normals[~mask] = (0.0, 0.0, 1.0)
    return SurfaceNormalMap(normals)


def _masked_difference(values: np.ndarray, mask: np.ndarray, axis: int) -> np.ndarray:
    prev_val = np.roll(values, 1, axis=axis)
    next_val = np.roll(values, -1, axis=axis)
    prev_ok = np.roll(mask, 1, axis=axis)
    next_ok = np.roll(mask, -1, axis=axis)
    # roll envuelve: los extremos nunca tienen vecino
    edge = [slice(None)] * 2
    edge[axis] = 0
    prev_ok[tuple(edge)] = False
    edge[axis] = -1
    next_ok[tuple(edge)] = False

    out = np.zeros_like(values)
    both = mask & prev_ok & next_ok
    only_next = mask & next_ok & ~prev_ok
    only_prev = mask & prev_ok & ~next_ok
    out[both] = (next_val[both] - prev_val[both]) / 2.0
    out[only_next] = next_val[only_next] - values[only_next]
    out[only_prev] = values[only_prev] - prev_val[only_prev]
    return out


def _inside(frame: DepthFrame, u, v):
    return (u >= 0.0) & (u <= frame.width - 1) & (v >= 0.0) & (v <= frame.height - 1)


def _hermite_basis(t):
    """
    Bases cúbicas de Hermite en t ∈ [0, 1]: ((a0, a1), (b0, b1)) ponderan valor y
    pendiente en cada extremo; se devuelven junto con sus derivadas.
    """
    t2 = t * t
    t3 = t2 * t
    da0 = 6.0 * t2 - 6.0 * t
    values = ((2.0 * t3 - 3.0 * t2 + 1.0, -2.0 * t3 + 3.0 * t2), (t3 - 2.0 * t2 + t, t3 - t2))
    derivatives = ((da0, -da0), (3.0 * t2 - 4.0 * t + 1.0, 3.0 * t2 - 2.0 * t))
    return values, derivatives


def _normal_slopes(frame: DepthFrame, normals: SurfaceNormalMap) -> tuple[np.ndarray, np.ndarray]:
    """Campo por píxel (∂ℐ/∂u, ∂ℐ/∂v) = (s^x, s^y)/s^z · paso, con s^z ≥ MIN_NORMAL_Z."""
    if normals.shape != frame.depth.shape:
        raise ShapeMismatchError(f"normales {normals.shape} y profundidad {frame.depth.shape} no coinciden")
    s = normals.normals
    sz = np.maximum(s[..., 2], MIN_NORMAL_Z)
    return s[..., 0] / sz * frame.pixel_pitch[0], s[..., 1] / sz * frame.pixel_pitch[1]


def _surface(frame: DepthFrame, normals: SurfaceNormalMap | None, u: np.ndarray, v: np.ndarray):
    """
    Superficie continua ℐ(u, v) y su gradiente exacto, celda a celda:

    - fuera de la imagen, el cono analítico;
    - celdas de fondo de un frame con cono (ninguna esquina de mano), el cono analítico;
    - celdas de mano (las cuatro esquinas) con normales, parche bicúbico de Hermite con
      las profundidades de las esquinas y las pendientes de sus normales (derivada
      cruzada nula), de clase C1 entre celdas;
    - el resto, interpolación bilineal.
    """
    w, h = frame.width, frame.height
    inside = _inside(frame, u, v)
    uc = np.clip(u, 0.0, w - 1)
    vc = np.clip(v, 0.0, h - 1)
    u0 = np.clip(np.floor(uc), 0, max(w - 2, 0)).astype(np.int64)
    v0 = np.clip(np.floor(vc), 0, max(h - 2, 0)).astype(np.int64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    t = uc - u0
    s = vc - v0
    d, m = frame.depth, frame.mask
    # esquinas [i][j]: i a lo largo de u, j a lo largo de v
    cu, cv = (u0, u1), (v0, v1)
    f = [[d[cv[j], cu[i]] for j in range(2)] for i in range(2)]
    corner_hand = [[m[cv[j], cu[i]] for j in range(2)] for i in range(2)]

    value = (1.0 - s) * ((1.0 - t) * f[0][0] + t * f[1][0]) + s * ((1.0 - t) * f[0][1] + t * f[1][1])
    du = (1.0 - s) * (f[1][0] - f[0][0]) + s * (f[1][1] - f[0][1])
    dv = (1.0 - t) * (f[0][1] - f[0][0]) + t * (f[1][1] - f[1][0])

    if normals is not None:
        all_hand = corner_hand[0][0] & corner_hand[0][1] & corner_hand[1][0] & corner_hand[1][1]
        if all_hand.any():
            slope_u, slope_v = _normal_slopes(frame, normals)
            gu = [[slope_u[cv[j], cu[i]] for j in range(2)] for i in range(2)]
            gv = [[slope_v[cv[j], cu[i]] for j in range(2)] for i in range(2)]
            (a_t, b_t), (da_t, db_t) = _hermite_basis(t)
            (a_s, b_s), (da_s, db_s) = _hermite_basis(s)
            h_val = np.zeros_like(t)
            h_du = np.zeros_like(t)
            h_dv = np.zeros_like(t)
            for i in range(2):
                for j in range(2):
                    h_val += f[i][j] * a_t[i] * a_s[j] + gu[i][j] * b_t[i] * a_s[j] + gv[i][j] * a_t[i] * b_s[j]
                    h_du += f[i][j] * da_t[i] * a_s[j] + gu[i][j] * db_t[i] * a_s[j] + gv[i][j] * da_t[i] * b_s[j]
                    h_dv += f[i][j] * a_t[i] * da_s[j] + gu[i][j] * b_t[i] * da_s[j] + gv[i][j] * a_t[i] * db_s[j]
            value = np.where(all_hand, h_val, value)
            du = np.where(all_hand, h_du, du)
            dv = np.where(all_hand, h_dv, dv)

    cone = cone_background(u, v, w, h, frame.cone_offset)
    cone_u, cone_v = cone_gradient(u, v, w, h)
    analytic = ~inside
    if frame.mode == CONE_FILLED:
        no_hand = ~(corner_hand[0][0] | corner_hand[0][1] | corner_hand[1][0] | corner_hand[1][1])
        analytic = analytic | no_hand
    value = np.where(analytic, cone, value)
    du = np.where(analytic, cone_u, du)
    dv = np.where(analytic, cone_v, dv)
    return value, du, dv


def sample_depth(frame: DepthFrame, u, v, normals: SurfaceNormalMap | None = None):
    """Profundidad continua en (u, v); ver ``_surface``. Fuera de la imagen, el cono extrapolado."""
    shape = np.shape(u)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64)).reshape(-1)
    v = np.atleast_1d(np.asarray(v, dtype=np.float64)).reshape(-1)
    value, _, _ = _surface(frame, normals, u, v)
    return value.reshape(shape)


def sample_gradient(frame: DepthFrame, normals: SurfaceNormalMap | None, u, v):
    """
    (∂ℐ/∂u, ∂ℐ/∂v) de la misma superficie que ``sample_depth(frame, u, v, normals)``.
    Sobre la mano con normales coincide con (s^x/s^z, s^y/s^z)·paso en cada centro de
    píxel; sobre el fondo en cono y fuera de la imagen es el gradiente del cono.
    """
    u = np.atleast_1d(np.asarray(u, dtype=np.float64)).reshape(-1)
    v = np.atleast_1d(np.asarray(v, dtype=np.float64)).reshape(-1)
    _, du, dv = _surface(frame, normals, u, v)
    return du, dv
