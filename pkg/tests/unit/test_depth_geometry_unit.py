# tests/unit/test_depth_geometry_unit.py

import allure
import numpy as np
import pytest

from hand_pose_tree.depth_geometry import (
    CONE_FILLED,
    CONE_OFFSET,
    MISSING,
    CameraModel,
    CropTransform,
    DepthFrame,
    backproject,
    cone_background,
    crop_and_normalize,
    estimate_normals,
    fill_background,
    network_input,
    project_joint,
    projection_jacobian,
    sample_depth,
    sample_gradient,
)
from hand_pose_tree.errors import BehindCameraError, EmptyFrameError, InvalidParameterError
from hand_pose_tree.losses.gradcheck import sphere_context


def _ramp(slope: float = 0.5, size: int = 12) -> DepthFrame:
    rows, cols = np.indices((size, size), dtype=np.float64)
    return DepthFrame(slope * cols + 10.0, mask=np.ones((size, size), dtype=bool))


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Transformación de recorte")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_escala_del_recorte():
    """w=192, M^z=800, c=250, fx=588 da scale_x ≈ 1.04490."""
    cam = CameraModel(588.0, 588.0, 320.0, 240.0)
    xform = CropTransform.from_center([0.0, 0.0, 800.0], 250.0, (192, 192), cam)
    assert round(xform.scale_x, 5) == pytest.approx(1.04490)
    doubled = CropTransform.from_center([0.0, 0.0, 800.0], 500.0, (192, 192), cam)
    assert xform.scale_x / doubled.scale_x == pytest.approx(2.0)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Proyección")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_ida_y_vuelta_de_proyeccion(rng, camera):
    """project_joint seguido de backproject recupera 1000 puntos dentro de 1e-6 mm."""
    xform = CropTransform.from_center([15.0, -20.0, 700.0], 250.0, (96, 96), camera)
    points = rng.uniform(-125.0, 125.0, size=(1000, 3))
    again = backproject(project_joint(points, xform), xform)
    np.testing.assert_allclose(again, points, atol=1e-6)
    np.testing.assert_allclose(project_joint([0.0, 0.0, 0.0], xform)[:2], [48.0, 48.0], atol=1e-9)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Proyección")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_jacobiano_de_proyeccion(rng, camera):
    """El jacobiano analítico coincide con diferencias centrales."""
    xform = CropTransform.from_center([0.0, 30.0, 650.0], 250.0, (96, 96), camera)
    point = rng.uniform(-60.0, 60.0, size=3)
    jac = projection_jacobian(point, xform)
    eps = 1e-4
    for k in range(3):
        step = np.zeros(3)
        step[k] = eps
        numeric = (project_joint(point + step, xform)[:2] - project_joint(point - step, xform)[:2]) / (2 * eps)
        np.testing.assert_allclose(jac[:, k], numeric, rtol=1e-6, atol=1e-9)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Errores")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_punto_detras_de_la_camara(camera):
    """Proyectar un punto con z ≤ 0 lanza BehindCameraError."""
    with pytest.raises(BehindCameraError):
        camera.project([0.0, 0.0, -1.0])
    xform = CropTransform.from_center([0.0, 0.0, 500.0], 250.0, (96, 96), camera)
    with pytest.raises(BehindCameraError):
        project_joint([0.0, 0.0, -600.0], xform)
    with pytest.raises(InvalidParameterError):
        CameraModel(0.0, 588.0, 0.0, 0.0)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Fondo en cono")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_relleno_en_cono():
    """Fuera de la mano el fondo es 5·r + 100; los píxeles de mano quedan intactos."""
    depth = np.zeros((20, 20))
    depth[8:12, 8:12] = -7.0
    frame = DepthFrame(depth, mask=depth != MISSING)
    filled = fill_background(frame)
    assert filled.mode == CONE_FILLED
    assert filled.depth[10, 10] == -7.0
    assert filled.depth[0, 10] == pytest.approx(cone_background(10, 0, 20, 20))
    assert cone_background(13.0, 14.0, 20, 20) == pytest.approx(5.0 * 5.0 + CONE_OFFSET)
    with pytest.raises(EmptyFrameError):
        fill_background(DepthFrame(np.zeros((4, 4))))


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Muestreo diferenciable")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_muestreo_bilineal_y_cono_exterior():
    """Dentro de la imagen se interpola; fuera se extrapola el cono."""
    frame = _ramp()
    assert sample_depth(frame, 2.5, 3.0) == pytest.approx(11.25)
    assert sample_depth(frame, -4.0, 6.0) == pytest.approx(cone_background(-4.0, 6.0, 12, 12, frame.cone_offset))
    du, dv = sample_gradient(frame, None, np.array([3.3]), np.array([4.7]))
    assert du[0] == pytest.approx(0.5)
    assert dv[0] == pytest.approx(0.0)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Normales de superficie")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_normales_de_una_rampa():
    """Una rampa de pendiente a tiene normal ∝ (a, 0, 1) y su gradiente de imagen es a."""
    frame = _ramp(0.5)
    normals = estimate_normals(frame)
    expected = np.array([0.5, 0.0, 1.0]) / np.linalg.norm([0.5, 0.0, 1.0])
    np.testing.assert_allclose(normals.normals[3:-3, 3:-3], np.broadcast_to(expected, (6, 6, 3)), atol=1e-9)
    du, dv = sample_gradient(frame, normals, np.array([6.0]), np.array([6.0]))
    assert du[0] == pytest.approx(0.5)
    assert dv[0] == pytest.approx(0.0, abs=1e-12)


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Muestreo diferenciable")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_gradiente_con_normales_sobre_esfera(rng):
    """Con normales, el gradiente es la derivada de la profundidad muestreada y vale s^x/s^z en cada píxel."""
    ctx = sphere_context(size=96, radius=60.0, with_normals=True)
    frame, normals = ctx.frame, ctx.normals
    center = frame.width / 2.0
    # hasta 0.8 radios del centro todas las celdas son de mano
    reach = 0.8 * 60.0 / max(frame.pixel_pitch)
    r = reach * np.sqrt(rng.uniform(size=200))
    a = rng.uniform(0.0, 2.0 * np.pi, size=200)
    u = center + r * np.cos(a)
    v = center + r * np.sin(a)

    du, dv = sample_gradient(frame, normals, u, v)
    h = 1e-4
    fd_u = (sample_depth(frame, u + h, v, normals) - sample_depth(frame, u - h, v, normals)) / (2.0 * h)
    fd_v = (sample_depth(frame, u, v + h, normals) - sample_depth(frame, u, v - h, normals)) / (2.0 * h)
    np.testing.assert_allclose(du, fd_u, rtol=1e-3, atol=1e-6)
    np.testing.assert_allclose(dv, fd_v, rtol=1e-3, atol=1e-6)

    cols = np.arange(40.0, 56.0)
    rows = np.full_like(cols, 48.0)
    s = normals.normals[48, 40:56]
    du_px, dv_px = sample_gradient(frame, normals, cols, rows)
    np.testing.assert_allclose(du_px, s[:, 0] / s[:, 2] * frame.pixel_pitch[0], rtol=1e-12)
    np.testing.assert_allclose(dv_px, s[:, 1] / s[:, 2] * frame.pixel_pitch[1], rtol=1e-12, atol=1e-15)
    np.testing.assert_array_equal(sample_depth(frame, cols, rows, normals), frame.depth[48, 40:56])

    bu, bv = sample_gradient(frame, normals, np.array([center + 30.0]), np.array([center]))
    assert (bu[0], bv[0]) == (pytest.approx(5.0), pytest.approx(0.0, abs=1e-12))


@allure.tag("modulo:depth_geometry", "tipo:unitario")
@allure.feature("Geometría de profundidad")
@allure.story("Recorte y normalización")
@pytest.mark.unit
@pytest.mark.depth_geometry
def test_recorte_de_una_muestra(scene_sample):
    """El recorte resta M^z, conserva la mano dentro del cubo y la entrada queda en [-1, 1]."""
    crop, xform = crop_and_normalize(scene_sample.frame, scene_sample.camera, scene_sample.center_world,
                                     scene_sample.cube, (96, 96))
    assert crop.depth.shape == (96, 96)
    assert crop.hand_pixels > 0
    assert crop.mean_offset == pytest.approx(scene_sample.center_world[2])
    assert np.all(np.abs(crop.depth[crop.mask]) <= scene_sample.cube / 2.0)
    image = network_input(crop, scene_sample.cube)
    assert image.min() >= -1.0 and image.max() <= 1.0
    assert np.all(image[~crop.mask] == 1.0)
    assert xform.size == (96, 96)
