# hand_pose_tree/losses/main.py

"""
Pérdida combinada L = λ1·L_loc + λ2·L_glo + λ3·L_app + λ4·L_dyn con gradientes
analíticos por salida de cada cabeza de la red.

- L_loc / L_glo: L2 sobre poses locales (8 articulaciones por rama) y global (20).
- L_app: bisagra de apariencia, ninguna articulación delante de la superficie
  observada; el fondo en cono atrae a las articulaciones que caen fuera de la mano.
- L_dyn: bisagras de colinealidad/coplanaridad de los dedos (sin pulgar) según
  el estado de dedo calculado sobre el ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from hand_pose_tree.depth_geometry import (
    CONE_FILLED,
    CONE_OFFSET,
    CameraModel,
    CropTransform,
    DepthFrame,
    SurfaceNormalMap,
    project_joint,
    projection_jacobian,
    sample_depth,
    sample_gradient,
)
from hand_pose_tree.errors import DegenerateFingerError, InvalidParameterError, ShapeMismatchError
from hand_pose_tree.hand_model import BRANCH_JOINTS, DYNAMICS_FINGERS, FINGERS, finger_quadruple

CROSS_EPS = 1e-9

LOCAL_HEADS = {finger: f"local_{finger}" for finger in FINGERS}
VIEWPOINT_HEAD = "viewpoint"
GLOBAL_HEAD = "global"
HEAD_SIZES = {**{name: 24 for name in LOCAL_HEADS.values()}, VIEWPOINT_HEAD: 4, GLOBAL_HEAD: 60}


class LossConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "lambda_local": 4.0,
                "lambda_global": 4.0,
                "lambda_appearance": 3.0,
                "lambda_dynamics": 20.0,
                "mu": 0.0005,
                "rho": 0.9659258262890683,
                "kappa_factor": 0.01,
            }
        },
    )

    lambda_local: float = Field(4.0, ge=0.0)
    lambda_global: float = Field(4.0, ge=0.0)
    lambda_appearance: float = Field(3.0, ge=0.0)
    lambda_dynamics: float = Field(20.0, ge=0.0)
    mu: float = Field(0.0005, ge=0.0)
    rho: float = Field(math.cos(math.radians(15.0)), gt=0.0, lt=1.0)
    kappa_factor: float = Field(0.01, ge=0.0)
    cone_offset: float = Field(CONE_OFFSET, gt=0.0)
    bend_tol_deg: float = Field(5.0, gt=0.0, lt=90.0)
    viewpoint_weight: float = Field(1e4, ge=0.0)
    constrain_global: bool = True

    def unconstrained(self) -> "LossConfig":
        return self.model_copy(update={"lambda_appearance": 0.0, "lambda_dynamics": 0.0})


@dataclass(frozen=True)
class FingerState:
    state: int
    e_g: np.ndarray

    def __post_init__(self):
        if self.state not in (1, 2, 3, 4):
            raise InvalidParameterError(f"estado de dedo inválido: {self.state}")
        e = np.array(self.e_g, dtype=np.float64)
        n = np.linalg.norm(e)
        if e.shape != (3,) or n < 1e-12:
            raise InvalidParameterError("e_G debe ser un vector 3D no nulo")
        e = e / n
        e.setflags(write=False)
        object.__setattr__(self, "e_g", e)

    def to_dict(self) -> dict:
        return {"state": int(self.state), "e_g": [float(v) for v in self.e_g]}

    @classmethod
    def from_dict(cls, data: dict) -> "FingerState":
        return cls(int(data["state"]), data["e_g"])


@dataclass
class LossTarget:
    """Ground truth de un frame: articulaciones de media cero (mm), cuaternión y estados."""

    joints: np.ndarray
    quaternion: np.ndarray
    finger_states: list


@dataclass
class FrameContext:
    frame: DepthFrame
    xform: CropTransform
    normals: Optional[SurfaceNormalMap] = None
    camera: Optional[CameraModel] = None


@dataclass
class TermResult:
    value: float
    gradient: np.ndarray
    degenerate_crosses: int = 0


@dataclass
class LossReport:
    local: float
    global_: float
    appearance: float
    dynamics: float
    total: float
    gradients: dict = field(default_factory=dict)
    degenerate_crosses: int = 0

    def as_row(self) -> dict:
        return {
            "loss_local": self.local,
            "loss_global": self.global_,
            "loss_appearance": self.appearance,
            "loss_dynamics": self.dynamics,
            "loss_total": self.total,
        }


def l2_loss(estimate, truth) -> tuple[float, np.ndarray]:
    f = np.asarray(estimate, dtype=np.float64)
    g = np.asarray(truth, dtype=np.float64)
    if f.shape != g.shape:
        raise ShapeMismatchError(f"L2 con formas distintas: {f.shape} vs {g.shape}")
    diff = f - g
    return float(np.sum(diff * diff)), 2.0 * diff


def appearance_loss(joints, ctx: FrameContext) -> TermResult:
    """Σ max(0, ℐ(u_i, v_i) − z_i) y su gradiente por la cadena de proyección."""
    frame = ctx.frame
    if frame.mode != CONE_FILLED:
        raise InvalidParameterError("la pérdida de apariencia requiere un frame con fondo en cono")
    j = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    uvz = project_joint(j, ctx.xform, ctx.camera)
    surface = np.atleast_1d(sample_depth(frame, uvz[:, 0], uvz[:, 1], ctx.normals))
    residual = surface - uvz[:, 2]
    active = residual > 0.0

    grad = np.zeros_like(j)
    if active.any():
        d_u, d_v = sample_gradient(frame, ctx.normals, uvz[:, 0], uvz[:, 1])
        jac = projection_jacobian(j, ctx.xform, ctx.camera)
        d_image = d_u[:, None] * jac[:, 0, :] + d_v[:, None] * jac[:, 1, :]
        d_image[:, 2] -= 1.0
        grad[active] = d_image[active]
    return TermResult(float(np.sum(residual[active])), grad)


def _bent(a, b, tol_sin: float) -> tuple[bool, np.ndarray]:
    n = np.cross(a, b)
    return bool(np.linalg.norm(n) > tol_sin * np.linalg.norm(a) * np.linalg.norm(b)), n


def classify_finger(a, b, c, d, kappa_factor: float = 0.01, bend_tol_deg: float = 5.0) -> FingerState:
    """
    Estado de dedo sobre ground truth.

    1: colineal (longitud de camino < |AD|·(1+κ)), e_G = AD normalizado.
    2: ABC y BCD doblados en el mismo plano, e_G = AB×BC.
    3: solo ABC doblado (o planos no paralelos), e_G = AB×BC.
    4: solo BCD doblado, e_G = BC×CD.
    """
    a, b, c, d = (np.asarray(p, dtype=np.float64) for p in (a, b, c, d))
    ab, bc, cd, ad = b - a, c - b, d - c, d - a
    lengths = [np.linalg.norm(s) for s in (ab, bc, cd)]
    if min(lengths) < 1e-9:
        raise DegenerateFingerError("segmento de dedo de longitud nula")
    ad_len = np.linalg.norm(ad)

    if ad_len > 0.0 and sum(lengths) < ad_len * (1.0 + kappa_factor):
        return FingerState(1, ad / ad_len)

    tol_sin = math.sin(math.radians(bend_tol_deg))
    bent_proximal, n1 = _bent(ab, bc, tol_sin)
    bent_distal, n2 = _bent(bc, cd, tol_sin)

    if bent_proximal and bent_distal:
        cos_planes = np.dot(n1, n2) / (np.linalg.norm(n1) * np.linalg.norm(n2))
        return FingerState(2 if cos_planes > math.cos(math.radians(bend_tol_deg)) else 3, n1)
    if bent_proximal:
        return FingerState(3, n1)
    if bent_distal:
        return FingerState(4, n2)
    if ad_len < 1e-9:
        raise DegenerateFingerError("dedo replegado sobre sí mismo")
    # casi colineal pero fuera de la holgura κ
    return FingerState(1, ad / ad_len)


def classify_hand(joints, kappa_factor: float = 0.01, bend_tol_deg: float = 5.0) -> list:
    j = np.asarray(joints, dtype=np.float64).reshape(-1, 3)
    return [classify_finger(*j[list(finger_quadruple(f))], kappa_factor=kappa_factor, bend_tol_deg=bend_tol_deg)
            for f in DYNAMICS_FINGERS]


def _cosine_hinge(vec, e, rho):
    """max(0, ρ − vec·e/|vec|) y su gradiente respecto a vec."""
    n = np.linalg.norm(vec)
    cos = np.dot(vec, e) / n
    if rho - cos <= 0.0:
        return 0.0, np.zeros(3)
    d_cos = e / n - np.dot(vec, e) * vec / n ** 3
    return rho - cos, -d_cos


def _cross_hinge(a, b, e, rho):
    """Bisagra sobre la normal a×b; None si el producto cruz es degenerado."""
    n = np.cross(a, b)
    if np.linalg.norm(n) < CROSS_EPS:
        return None
    value, g_n = _cosine_hinge(n, e, rho)
    return value, np.cross(b, g_n), np.cross(g_n, a)


def finger_dynamics(quad, state: FingerState, rho: float, mu: float, kappa_factor: float = 0.01) -> TermResult:
    """Pérdida de dinámica de un dedo (A, B, C, D) estimado; gradiente (4, 3)."""
    q = np.asarray(quad, dtype=np.float64).reshape(4, 3)
    a, b, c, d = q
    grad = np.zeros((4, 3))
    value = 0.0
    degenerate = 0
    e = state.e_g

    if state.state == 1:
        segments = ((0, 1), (1, 2), (2, 3))
        for i, k in segments:
            vec = q[k] - q[i]
            if np.linalg.norm(vec) < 1e-9:
                raise DegenerateFingerError("segmento estimado de longitud nula")
            h, g = _cosine_hinge(vec, e, rho)
            value += h
            grad[k] += g
            grad[i] -= g
        ad = d - a
        ad_len = np.linalg.norm(ad)
        path = sum(np.linalg.norm(q[k] - q[i]) for i, k in segments)
        excess = path - (1.0 + kappa_factor) * ad_len
        if excess > 0.0:
            value += mu * excess
            for i, k in segments:
                vec = q[k] - q[i]
                unit = vec / np.linalg.norm(vec)
                grad[k] += mu * unit
                grad[i] -= mu * unit
            if ad_len > 0.0:
                grad[3] -= mu * (1.0 + kappa_factor) * ad / ad_len
                grad[0] += mu * (1.0 + kappa_factor) * ad / ad_len
        return TermResult(value, grad)

    # (vértice de a, vértice compartido, vértice de b) para cada producto cruz
    if state.state == 2:
        triples = ((0, 1, 2), (0, 2, 3))
    elif state.state == 3:
        triples = ((0, 1, 2),)
    else:
        triples = ((1, 2, 3),)
    for i, k, m in triples:
        result = _cross_hinge(q[k] - q[i], q[m] - q[k], e, rho)
        if result is None:
            degenerate += 1
            continue
        h, g_a, g_b = result
        value += h
        grad[i] -= g_a
        grad[k] += g_a - g_b
        grad[m] += g_b
    return TermResult(value, grad, degenerate)


def dynamics_loss(fingers, states, rho: float, mu: float, kappa_factor: float = 0.01) -> TermResult:
    """Suma sobre los 4 dedos (sin pulgar); ``fingers`` es (4, 4, 3)."""
    quads = np.asarray(fingers, dtype=np.float64).reshape(-1, 4, 3)
    if len(states) != quads.shape[0]:
        raise ShapeMismatchError("número de estados distinto del de dedos")
    grad = np.zeros_like(quads)
    value = 0.0
    degenerate = 0
    for i, (quad, state) in enumerate(zip(quads, states)):
        r = finger_dynamics(quad, state, rho, mu, kappa_factor)
        value += r.value
        grad[i] = r.gradient
        degenerate += r.degenerate_crosses
    return TermResult(value, grad, degenerate)


# Posición de (A, B, C, D) dentro de la pose local de 8 articulaciones
def _branch_quadruple(finger: str) -> list:
    branch = list(BRANCH_JOINTS[finger])
    return [branch.index(j) for j in finger_quadruple(finger)]


BRANCH_QUADRUPLES = {finger: _branch_quadruple(finger) for finger in DYNAMICS_FINGERS}


def _constraint_terms(joints, fingers, target: LossTarget, ctx: FrameContext, config: LossConfig):
    """L_app y L_dyn de un conjunto de articulaciones estimadas (k, 3)."""
    app_val, app_grad, dyn_val, degenerate = 0.0, np.zeros_like(joints), 0.0, 0
    dyn_grad = np.zeros_like(joints)
    if ctx is not None and config.lambda_appearance > 0.0:
        r = appearance_loss(joints, ctx)
        app_val, app_grad = r.value, r.gradient
    if config.lambda_dynamics > 0.0:
        for finger, idx in fingers:
            state = target.finger_states[DYNAMICS_FINGERS.index(finger)]
            r = finger_dynamics(joints[idx], state, config.rho, config.mu, config.kappa_factor)
            dyn_val += r.value
            dyn_grad[idx] += r.gradient
            degenerate += r.degenerate_crosses
    return app_val, app_grad, dyn_val, dyn_grad, degenerate


def combined_loss(outputs: dict, target: LossTarget, ctx: FrameContext | None, config: LossConfig) -> LossReport:
    """
    Evalúa las cabezas presentes en ``outputs`` (vectores en mm / cuaternión).

    L_app y L_dyn se aplican a la pose local de cada rama de dedo y, con
    ``constrain_global``, también a la cabeza global.
    """
    truth = np.asarray(target.joints, dtype=np.float64).reshape(20, 3)
    l_loc = l_glo = l_app = l_dyn = 0.0
    degenerate = 0
    raw_grads = {}

    for finger, head in LOCAL_HEADS.items():
        if head not in outputs:
            continue
        est = np.asarray(outputs[head], dtype=np.float64).reshape(8, 3)
        value, g_loc = l2_loss(est, truth[list(BRANCH_JOINTS[finger])])
        l_loc += value
        fingers = [(finger, BRANCH_QUADRUPLES[finger])] if finger in BRANCH_QUADRUPLES else []
        a_val, a_grad, d_val, d_grad, deg = _constraint_terms(est, fingers, target, ctx, config)
        l_app += a_val
        l_dyn += d_val
        degenerate += deg
        raw_grads[head] = (config.lambda_local * g_loc + config.lambda_appearance * a_grad
                           + config.lambda_dynamics * d_grad).reshape(-1)

    if VIEWPOINT_HEAD in outputs:
        value, g_q = l2_loss(outputs[VIEWPOINT_HEAD], target.quaternion)
        l_loc += config.viewpoint_weight * value
        raw_grads[VIEWPOINT_HEAD] = config.lambda_local * config.viewpoint_weight * g_q

    if GLOBAL_HEAD in outputs:
        est = np.asarray(outputs[GLOBAL_HEAD], dtype=np.float64).reshape(20, 3)
        l_glo, g_glo = l2_loss(est, truth)
        grad = config.lambda_global * g_glo
        if config.constrain_global:
            fingers = [(f, list(finger_quadruple(f))) for f in DYNAMICS_FINGERS]
            a_val, a_grad, d_val, d_grad, deg = _constraint_terms(est, fingers, target, ctx, config)
            l_app += a_val
            l_dyn += d_val
            degenerate += deg
            grad = grad + config.lambda_appearance * a_grad + config.lambda_dynamics * d_grad
        raw_grads[GLOBAL_HEAD] = grad.reshape(-1)

    total = (config.lambda_local * l_loc + config.lambda_global * l_glo
             + config.lambda_appearance * l_app + config.lambda_dynamics * l_dyn)
    if degenerate:
        logger.debug(f"[PERDIDAS] {degenerate} productos cruz degenerados omitidos")
    return LossReport(l_loc, l_glo, l_app, l_dyn, total, raw_grads, degenerate)


@dataclass
class GradCheckResult:
    max_relative_error: float
    checked: int
    skipped: int

    @property
    def passed(self) -> bool:
        return self.max_relative_error <= 1e-4


# resolución de la diferencia central: por debajo de ella el valor numérico es redondeo
FD_ROUNDOFF = 1e3 * np.finfo(np.float64).eps
RELATIVE_FLOOR = 1e-8


def finite_difference_check(loss: Callable[[np.ndarray], tuple], point, eps: float = 1e-6,
                            kink_tol: float = 1e-3) -> GradCheckResult:
    """
    Compara el gradiente analítico de ``loss`` (que devuelve (valor, gradiente)) con
    diferencias centrales. Las coordenadas con una bisagra a menos de 2ε (el
    gradiente analítico cambia entre x−2ε y x+2ε) se omiten y se cuentan aparte.

    Error por coordenada: (|a − n| − r) / max(|a|, |n|, 1e-8), con r el redondeo de
    la diferencia central, r = 1e3·ulp·max(|f(x+ε)|, |f(x−ε)|, 1) / 2ε.
    """
    if not 1e-6 <= eps <= 1e-2:
        raise InvalidParameterError(f"ε fuera de [1e-6, 1e-2]: {eps}")
    x = np.array(point, dtype=np.float64)
    _, analytic = loss(x)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)

    worst, checked, skipped = 0.0, 0, 0
    flat = x.reshape(-1)
    grad_flat = analytic.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + 2.0 * eps
        g_hi = np.asarray(loss(x)[1]).reshape(-1)[i]
        flat[i] = original - 2.0 * eps
        g_lo = np.asarray(loss(x)[1]).reshape(-1)[i]
        if abs(g_hi - g_lo) > kink_tol * max(1.0, abs(grad_flat[i])):
            flat[i] = original
            skipped += 1
            continue
        flat[i] = original + eps
        f_hi = float(loss(x)[0])
        flat[i] = original - eps
        f_lo = float(loss(x)[0])
        flat[i] = original
        numeric = (f_hi - f_lo) / (2.0 * eps)
        roundoff = FD_ROUNDOFF * max(abs(f_hi), abs(f_lo), 1.0) / (2.0 * eps)
        a = grad_flat[i]
        error = max(0.0, abs(a - numeric) - roundoff) / max(abs(a), abs(numeric), RELATIVE_FLOOR)
        worst = max(worst, error)
        checked += 1
    return GradCheckResult(worst, checked, skipped)
