# tests/unit/test_synth_render_unit.py

import json
import os

import allure
import numpy as np
import pytest
from pydantic import ValidationError

from hand_pose_tree.errors import DatasetFormatError, OutputDirectoryError, RejectedSampleError
from hand_pose_tree.hand_model import REFERENCE_JOINTS
from hand_pose_tree.synth_render import (
    FORMAT_VERSION,
    CapsuleHand,
    PoseRanges,
    RenderConfig,
    appearance_violation,
    dumps_record,
    generate_sample,
    prepare_output_dir,
    read_manifest,
    read_sample,
    render_depth,
    sample_pose,
    write_dataset,
)


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Render de profundidad")
@pytest.mark.unit
@pytest.mark.synth_render
def test_render_de_mano_plana():
    """La mano plana a distancia D se ve con la cara de la palma a D − radio de palma."""
    render = RenderConfig()
    distance = 750.0
    joints = REFERENCE_JOINTS.translated([0.0, -90.0, distance])
    hand = CapsuleHand.from_joints(joints)
    result = render_depth(hand, render.camera(), (render.width, render.height))
    hit = result.frame.mask
    assert hit.sum() > 500
    assert result.frame.depth[hit].min() == pytest.approx(distance - render.palm_radius, abs=1e-6)
    assert result.frame.depth[hit].max() <= distance + render.palm_radius


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Render de profundidad")
@pytest.mark.unit
@pytest.mark.synth_render
def test_render_sin_mano_esta_vacio():
    """Sin mano todos los píxeles quedan ausentes."""
    render = RenderConfig(width=16, height=16)
    result = render_depth(None, render.camera(), (16, 16), with_normals=True)
    assert result.frame.hand_pixels == 0
    np.testing.assert_allclose(result.normals.normals[..., 2], 1.0)


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Muestreo de poses")
@pytest.mark.unit
@pytest.mark.synth_render
def test_rangos_colapsados_dan_la_pose_de_referencia(rng):
    """Con todos los rangos colapsados la pose es la de referencia centrada a la distancia pedida."""
    params, quaternion = sample_pose(rng, PoseRanges.collapsed(700.0))
    np.testing.assert_allclose(params.joint_angles, 0.0)
    np.testing.assert_allclose(quaternion.as_array(), [1.0, 0.0, 0.0, 0.0], atol=1e-12)
    with pytest.raises(ValidationError):
        PoseRanges(distance=(900.0, 600.0))


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Determinismo")
@pytest.mark.unit
@pytest.mark.synth_render
def test_muestra_determinista(scene_sample):
    """La misma (semilla, id) produce exactamente la misma muestra."""
    from conftest import SEED

    again = generate_sample(0, SEED)
    assert dumps_record(again) == dumps_record(scene_sample)
    np.testing.assert_array_equal(again.frame.depth, scene_sample.frame.depth)
    other = generate_sample(1, SEED)
    assert dumps_record(other) != dumps_record(scene_sample)


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Generación de muestras")
@pytest.mark.unit
@pytest.mark.synth_render
def test_contenido_de_una_muestra(scene_sample):
    """La muestra lleva mano visible, cuatro estados de dedo, cuaternión unitario y procedencia."""
    assert scene_sample.frame.hand_pixels > 0
    assert len(scene_sample.finger_states) == 4
    assert scene_sample.quaternion.norm() == pytest.approx(1.0)
    assert scene_sample.quaternion.w >= 0.0
    assert scene_sample.provenance["generator"] == "synth_render"
    assert scene_sample.provenance["appearance_violation_mm"] <= RenderConfig().max_appearance_violation_mm
    assert scene_sample.center_world[2] > 0.0


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Consistencia de apariencia")
@pytest.mark.unit
@pytest.mark.synth_render
def test_ground_truth_detras_de_la_superficie():
    """En un barrido con semilla fija ninguna articulación queda más de 1 mm delante de la superficie."""
    for sample_id in range(25):
        sample = generate_sample(sample_id, 7)
        violation = appearance_violation(sample)
        assert violation.shape == (20,)
        assert violation.max() <= 1.0, f"muestra {sample_id}: {violation.max():.3f} mm"
        assert sample.provenance["appearance_violation_mm"] == pytest.approx(violation.max())


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Render sintético")
@allure.story("Consistencia de apariencia")
@pytest.mark.unit
@pytest.mark.synth_render
def test_muestra_inconsistente_se_rechaza(monkeypatch):
    """Si el ground truth queda delante de la superficie en todos los intentos, la muestra se rechaza."""
    monkeypatch.setattr("hand_pose_tree.synth_render.main.appearance_violation", lambda sample: np.full(20, 5.0))
    with pytest.raises(RejectedSampleError):
        generate_sample(0, 7, render=RenderConfig(max_redraws=2))
    accepted = generate_sample(0, 7, render=RenderConfig(max_appearance_violation_mm=5.0))
    assert accepted.provenance["appearance_violation_mm"] == 5.0


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Formato de dataset")
@allure.story("Lectura y escritura")
@pytest.mark.unit
@pytest.mark.synth_render
def test_dataset_en_disco(dataset_dir, dataset):
    """El dataset generado se relee con su manifest, profundidad float32 y articulaciones."""
    from conftest import DATASET_SIZE

    manifest = read_manifest(dataset_dir)
    assert manifest.format_version == FORMAT_VERSION
    assert manifest.count == DATASET_SIZE
    assert [s.sample_id for s in dataset] == list(range(DATASET_SIZE))
    first = dataset[0]
    assert os.path.getsize(os.path.join(dataset_dir, "000000.depth.f32")) == first.frame.width * first.frame.height * 4
    np.testing.assert_array_equal(first.frame.depth, first.frame.depth.astype(np.float32))


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Formato de dataset")
@allure.story("Lectura y escritura")
@pytest.mark.unit
@pytest.mark.synth_render
def test_reescritura_conserva_las_muestras(tmp_path, dataset):
    """Escribir y releer una muestra conserva articulaciones, centro, cámara y estados de dedo."""
    out = tmp_path / "copia"
    write_dataset(str(out), dataset[:2])
    again = read_sample(str(out), "000001")
    source = dataset[1]
    np.testing.assert_array_equal(again.joints.joints, source.joints.joints)
    np.testing.assert_array_equal(again.center_world, source.center_world)
    np.testing.assert_array_equal(again.frame.depth, source.frame.depth)
    assert again.camera == source.camera
    assert [s.state for s in again.finger_states] == [s.state for s in source.finger_states]
    for a, b in zip(again.finger_states, source.finger_states):
        np.testing.assert_allclose(a.e_g, b.e_g, atol=1e-12)


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Formato de dataset")
@allure.story("Errores")
@pytest.mark.unit
@pytest.mark.synth_render
def test_directorio_de_salida_no_vacio(tmp_path):
    """Un directorio de salida con contenido se rechaza."""
    (tmp_path / "algo.txt").write_text("x")
    with pytest.raises(OutputDirectoryError):
        prepare_output_dir(str(tmp_path))


@allure.tag("modulo:synth_render", "tipo:unitario")
@allure.feature("Formato de dataset")
@allure.story("Errores")
@pytest.mark.unit
@pytest.mark.synth_render
def test_manifest_y_muestra_corruptos(tmp_path, dataset):
    """Versión de formato desconocida o profundidad truncada dan DatasetFormatError."""
    out = tmp_path / "roto"
    write_dataset(str(out), dataset[:1])
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    manifest["format_version"] = FORMAT_VERSION + 1
    (out / "manifest.json").write_text(json.dumps(manifest), encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_manifest(str(out))

    depth = out / "000000.depth.f32"
    depth.write_bytes(depth.read_bytes()[:-4])
    with pytest.raises(DatasetFormatError):
        read_sample(str(out), "000000")
    with pytest.raises(DatasetFormatError):
        read_manifest(str(tmp_path / "no_existe"))
