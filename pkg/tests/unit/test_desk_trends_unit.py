# tests/unit/test_desk_trends_unit.py

import allure
import numpy as np
import pytest

from hand_pose_tree.eval_cli.main import predict_samples, run_training
from hand_pose_tree.eval_cli.metrics import evaluate, replace_palm_with_viewpoint
from hand_pose_tree.hand_model import PALM_JOINTS
from hand_pose_tree.netgraph import RunConfig, TrainerConfig
from hand_pose_tree.synth_render import generate_dataset, read_dataset

TRAIN_FRAMES = 5000
TEST_FRAMES = 1000
OVERFIT_FRAMES = 200
WORKERS = 4


@pytest.fixture(scope="module")
def desk_split(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    with allure.step(f"Generando {TRAIN_FRAMES} frames de entrenamiento y {TEST_FRAMES} de test"):
        generate_dataset(str(root / "train"), TRAIN_FRAMES, seed=11, workers=WORKERS)
        generate_dataset(str(root / "test"), TEST_FRAMES, seed=12, workers=WORKERS)
    return read_dataset(str(root / "train")), read_dataset(str(root / "test"))


@pytest.fixture(scope="module")
def desk_runs(desk_split):
    """Cada configuración se entrena una vez por módulo: nombre -> (red, error medio de test en mm)."""
    train_samples, test_samples = desk_split
    cache = {}

    def run(name: str, config: RunConfig):
        if name not in cache:
            with allure.step(f"Entrenando '{name}'"):
                graph, _ = run_training(config, train_samples)
                predictions, _, used = predict_samples(graph, test_samples)
                truth = np.stack([s.joints.joints for s in used])
                cache[name] = (graph, evaluate(predictions, truth, label=name).mean_error)
        return cache[name]

    return run


def _constrained() -> RunConfig:
    return RunConfig.for_method(4)


@allure.tag("modulo:netgraph", "tipo:aceptacion")
@allure.feature("Tendencias a escala de escritorio")
@allure.story("Sobreajuste")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.slow
def test_sobreajuste_de_200_frames(desk_split):
    """Sin dropout, el árbol memoriza 200 frames por debajo de 3 mm en como mucho 200 épocas."""
    train_samples, _ = desk_split
    run = RunConfig(dropout=0.0, val_fraction=0.0,
                    trainer=TrainerConfig.desk(epochs=200, lr_decay_epochs=(150,)))
    _, log = run_training(run, train_samples[:OVERFIT_FRAMES])
    train_errors = [row["mean_error_mm"] for row in log.rows if row["split"] == "train"]
    assert len(train_errors) == 200
    assert min(train_errors) < 3.0, f"mejor error de entrenamiento {min(train_errors):.2f} mm"


@allure.tag("modulo:netgraph", "tipo:aceptacion")
@allure.feature("Tendencias a escala de escritorio")
@allure.story("Arquitectura")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.slow
def test_arbol_no_peor_que_canal_unico(desk_runs):
    """Con las mismas pérdidas sin restricciones, el árbol no queda por encima del canal único de igual capacidad."""
    _, tree_error = desk_runs("arbol", RunConfig.for_method(2))
    _, single_error = desk_runs("canal_unico", RunConfig.for_method(1))
    assert tree_error <= single_error, f"árbol {tree_error:.2f} mm vs canal único {single_error:.2f} mm"


@allure.tag("modulo:netgraph", "tipo:aceptacion")
@allure.feature("Tendencias a escala de escritorio")
@allure.story("Restricciones físicas")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.slow
def test_restricciones_no_empeoran(desk_runs):
    """La misma red con apariencia y dinámica no queda por encima de la versión con λ_app = λ_dyn = 0."""
    constrained = _constrained()
    unconstrained = constrained.model_copy(update={"loss": constrained.loss.unconstrained()})
    _, with_constraints = desk_runs("metodo_4", constrained)
    _, without_constraints = desk_runs("metodo_4_sin_restricciones", unconstrained)
    assert with_constraints <= without_constraints, (
        f"con restricciones {with_constraints:.2f} mm vs sin ellas {without_constraints:.2f} mm"
    )


@allure.tag("modulo:netgraph", "tipo:aceptacion")
@allure.feature("Tendencias a escala de escritorio")
@allure.story("Aumento de datos")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.slow
def test_aumento_no_empeora(desk_runs):
    """Entrenar con el aumento A ×4 no queda por encima del mismo entrenamiento sin aumento."""
    _, plain = desk_runs("metodo_4", _constrained())
    _, augmented = desk_runs("metodo_5", RunConfig.for_method(5))
    assert augmented <= plain, f"con aumento {augmented:.2f} mm vs sin aumento {plain:.2f} mm"


@allure.tag("modulo:netgraph", "tipo:aceptacion")
@allure.feature("Tendencias a escala de escritorio")
@allure.story("Palma desde el punto de vista")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.slow
def test_palma_del_punto_de_vista_reduce_el_error(desk_runs, desk_split):
    """Con los cuaterniones reales, sustituir la palma reduce el error de palma del modelo entrenado."""
    _, test_samples = desk_split
    graph, _ = desk_runs("metodo_4", _constrained())
    predictions, _, used = predict_samples(graph, test_samples)
    truth = np.stack([s.joints.joints for s in used])
    quats = np.stack([s.quaternion.as_array() for s in used])
    palm = list(PALM_JOINTS)
    raw = evaluate(predictions, truth, palm).mean_error
    replaced = evaluate(replace_palm_with_viewpoint(predictions, quats), truth, palm).mean_error
    assert replaced < raw, f"palma sustituida {replaced:.2f} mm vs predicha {raw:.2f} mm"
