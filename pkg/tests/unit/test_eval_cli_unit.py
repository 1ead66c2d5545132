# tests/unit/test_eval_cli_unit.py

import json

import allure
import numpy as np
import pytest
from click.testing import CliRunner
from scipy.spatial.transform import Rotation

from hand_pose_tree.errors import DatasetFormatError, ShapeMismatchError
from hand_pose_tree.eval_cli import (
    JOINT_SUBSETS,
    emit_report,
    evaluate,
    plot_curves,
    read_curves,
    replace_palm_with_viewpoint,
    success_curve,
)
from hand_pose_tree.eval_cli.main import cli
from hand_pose_tree.eval_cli.metrics import SUCCESS_MAX, SUCCESS_MEAN, report_curves
from hand_pose_tree.hand_model import (
    PALM_JOINTS,
    KinematicParams,
    Quaternion,
    forward_kinematics,
    viewpoint_quaternion,
)
from hand_pose_tree.log_config import reset_logging
from hand_pose_tree.synth_render import read_manifest


@pytest.fixture
def runner():
    yield CliRunner()
    reset_logging()


def _report(rng, label="run"):
    truth = rng.normal(scale=50.0, size=(12, 20, 3))
    pred = truth + rng.normal(scale=10.0, size=truth.shape)
    return evaluate(pred, truth, label=label)


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Métricas")
@allure.story("Tasa de acierto")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_curva_con_umbral_estricto():
    """Errores {5, 15, 25} a 20 mm dan 2/3; un error igual al umbral no cuenta."""
    assert success_curve([5.0, 15.0, 25.0], [20.0])[0] == pytest.approx(2.0 / 3.0)
    np.testing.assert_array_equal(success_curve([10.0], [10.0, 10.5]), [0.0, 1.0])


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Métricas")
@allure.story("Error medio")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_error_medio_y_curvas(rng):
    """Un desplazamiento de 3 mm da error medio 3 y curvas que saltan de 0 a 1 tras el umbral 3."""
    truth = rng.normal(scale=50.0, size=(5, 20, 3))
    report = evaluate(truth + [3.0, 0.0, 0.0], truth)
    assert report.mean_error == pytest.approx(3.0)
    np.testing.assert_allclose(report.per_joint, 3.0)
    assert report.success_max[3] == 0.0 and report.success_max[4] == 1.0
    np.testing.assert_array_equal(report.success_max, report.success_mean)


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Métricas")
@allure.story("Tasa de acierto")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_curvas_monotonas(rng):
    """Las curvas están en [0, 1], no decrecen y la del error medio domina a la del máximo."""
    report = _report(rng)
    for curve in (report.success_max, report.success_mean):
        assert np.all(np.diff(curve) >= 0.0)
        assert curve.min() >= 0.0 and curve.max() <= 1.0
    assert np.all(report.success_mean >= report.success_max)


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Métricas")
@allure.story("Errores")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_formas_incompatibles():
    """Formas distintas o sin frames dan ShapeMismatchError."""
    with pytest.raises(ShapeMismatchError):
        evaluate(np.zeros((2, 20, 3)), np.zeros((3, 20, 3)))
    with pytest.raises(ShapeMismatchError):
        evaluate(np.zeros((0, 20, 3)), np.zeros((0, 20, 3)))
    with pytest.raises(ShapeMismatchError):
        replace_palm_with_viewpoint(np.zeros((2, 20, 3)), np.zeros((3, 4)))


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Métricas")
@allure.story("Sustitución de palma")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_sustitucion_de_palma_reduce_el_error(rng):
    """Con muñeca precisa, MCP ruidosos y el cuaternión real, la palma sustituida mejora."""
    truth = []
    for _ in range(10):
        q = Quaternion.from_matrix(Rotation.random(random_state=int(rng.integers(1 << 31))).as_matrix())
        params = KinematicParams.reference(rng.uniform(-50.0, 50.0, size=3) + [0.0, 0.0, 700.0])
        truth.append(forward_kinematics(params.replace(palm_rotation=q)).joints)
    truth = np.array(truth)
    pred = truth.copy()
    pred[:, 0] += rng.normal(scale=2.0, size=(10, 3))
    pred[:, 1:5] += rng.normal(scale=10.0, size=(10, 4, 3))
    quats = np.array([viewpoint_quaternion(t).as_array() for t in truth])

    replaced = replace_palm_with_viewpoint(pred, quats)
    palm = JOINT_SUBSETS["palm"]
    assert evaluate(replaced, truth, palm).mean_error < evaluate(pred, truth, palm).mean_error
    np.testing.assert_array_equal(replaced[:, 5:], pred[:, 5:])
    np.testing.assert_array_equal(replaced[:, 0], pred[:, 0])
    assert list(palm) == list(PALM_JOINTS)


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Informes")
@allure.story("CSV")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_informe_csv_y_curvas(tmp_path, rng):
    """report.csv lleva cabecera, 20 errores por articulación y 81 umbrales por criterio."""
    report = _report(rng)
    paths = emit_report(report, str(tmp_path / "informe"))
    lines = (tmp_path / "informe" / "report.csv").read_text(encoding="utf-8").splitlines()
    assert lines[0] == "metric,joint,threshold_mm,value"
    assert len(lines) == 1 + 20 + 2 * 81
    assert lines[1].startswith("mean_error_mm,wrist,,")

    curves = read_curves(str(tmp_path / "informe"))
    for metric in (SUCCESS_MAX, SUCCESS_MEAN):
        thresholds, values = curves[metric]
        np.testing.assert_array_equal(thresholds, np.arange(81))
        np.testing.assert_allclose(values, report_curves(report)[metric][1], atol=1e-6)
    assert paths["svg"].endswith("curves.svg")


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Informes")
@allure.story("CSV")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_informe_con_cabecera_incorrecta(tmp_path):
    """Un CSV con otras columnas no es un informe."""
    bad = tmp_path / "report.csv"
    bad.write_text("a,b\n1,2\n", encoding="utf-8")
    with pytest.raises(DatasetFormatError):
        read_curves(str(bad))
    with pytest.raises(DatasetFormatError):
        read_curves(str(tmp_path / "no_existe.csv"))


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("Informes")
@allure.story("SVG")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_svg_determinista(tmp_path, rng):
    """Las mismas curvas producen exactamente los mismos bytes."""
    series = {"a": report_curves(_report(rng, "a")), "b": report_curves(_report(rng, "b"))}
    plot_curves(series, str(tmp_path / "uno.svg"))
    plot_curves(series, str(tmp_path / "dos.svg"))
    assert (tmp_path / "uno.svg").read_bytes() == (tmp_path / "dos.svg").read_bytes()


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("CLI")
@allure.story("Generación y depuración")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_cli_gen_y_dedupe(tmp_path, runner):
    """gen y dedupe terminan con 0 y dejan datasets legibles."""
    gen_dir, dedup_dir = tmp_path / "gen", tmp_path / "dedup"
    result = runner.invoke(cli, ["gen", "--count", "3", "--seed", "7", "--out", str(gen_dir)])
    assert result.exit_code == 0, result.output
    assert read_manifest(str(gen_dir)).count == 3

    result = runner.invoke(cli, ["dedupe", "--in", str(gen_dir), "--out", str(dedup_dir), "--threshold", "10"])
    assert result.exit_code == 0, result.output
    assert 1 <= read_manifest(str(dedup_dir)).count <= 3


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("CLI")
@allure.story("Códigos de salida")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_cli_codigos_de_salida(tmp_path, runner, dataset_dir):
    """Uso incorrecto → 1, error de datos o configuración → 2."""
    busy = tmp_path / "ocupado"
    busy.mkdir()
    (busy / "algo.txt").write_text("x")
    assert runner.invoke(cli, ["gen", "--count", "1", "--out", str(busy)]).exit_code == 2

    assert runner.invoke(cli, ["train", "--data", dataset_dir, "--method", "9",
                               "--out", str(tmp_path / "m9")]).exit_code == 1
    assert runner.invoke(cli, ["eval", "--model", str(tmp_path / "no_existe.ckpt"), "--data", dataset_dir,
                               "--out", str(tmp_path / "ev")]).exit_code == 1
    assert runner.invoke(cli, ["no-existe"]).exit_code == 1

    broken = tmp_path / "roto.json"
    broken.write_text("{\"version\": 1,", encoding="utf-8")
    assert runner.invoke(cli, ["train", "--data", dataset_dir, "--config", str(broken),
                               "--out", str(tmp_path / "t")]).exit_code == 2
    unknown = tmp_path / "desconocida.json"
    unknown.write_text(json.dumps({"version": 1, "optimizer": "adam"}), encoding="utf-8")
    assert runner.invoke(cli, ["train", "--data", dataset_dir, "--config", str(unknown),
                               "--out", str(tmp_path / "t")]).exit_code == 2


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("CLI")
@allure.story("Gradientes")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_cli_gradcheck(runner):
    """La batería reducida de gradientes pasa con código 0 y una línea por comprobación."""
    result = runner.invoke(cli, ["gradcheck", "--configurations", "8", "--seed", "1"])
    assert result.exit_code == 0, result.output
    names = [line.split("\t")[0] for line in result.output.splitlines() if "\t" in line]
    assert "losses.dynamics" in names and "netgraph.conv6x6" in names
    assert {"losses.appearance_normals", "losses.combined_normals"} <= set(names)


@allure.tag("modulo:eval_cli", "tipo:unitario")
@allure.feature("CLI")
@allure.story("Entrenamiento y evaluación")
@pytest.mark.unit
@pytest.mark.eval_cli
def test_cli_train_eval_plot(tmp_path, runner, dataset_dir):
    """train → eval → plot sobre el dataset diminuto con una configuración mínima."""
    config = tmp_path / "run.json"
    config.write_text(json.dumps({
        "version": 1,
        "arch": "fcbranch",
        "trainer": {"batch_size": 2, "epochs": 1, "lr_decay_epochs": [1]},
        "val_fraction": 0.34,
    }), encoding="utf-8")
    model_dir, eval_dir = tmp_path / "modelo", tmp_path / "eval"

    result = runner.invoke(cli, ["train", "--data", dataset_dir, "--config", str(config), "--out", str(model_dir)])
    assert result.exit_code == 0, result.output
    assert (model_dir / "best.ckpt").exists() and (model_dir / "training_log.csv").exists()
    assert json.loads((model_dir / "run_config.json").read_text(encoding="utf-8"))["arch"] == "fcbranch"

    result = runner.invoke(cli, ["eval", "--model", str(model_dir / "best.ckpt"), "--data", dataset_dir,
                                 "--out", str(eval_dir), "--palm-viewpoint", "--viewpoint-source", "ground-truth"])
    assert result.exit_code == 0, result.output
    summary = json.loads((eval_dir / "summary.json").read_text(encoding="utf-8"))
    assert summary["frames"] > 0 and np.isfinite(summary["mean_error_mm"])
    assert len((eval_dir / "report.csv").read_text(encoding="utf-8").splitlines()) == 183

    result = runner.invoke(cli, ["plot", "--reports", f"{eval_dir},{eval_dir / 'report.csv'}",
                                 "--out", str(tmp_path / "todo.svg")])
    assert result.exit_code == 0, result.output
    assert (tmp_path / "todo.svg").read_bytes().startswith(b"<?xml")
