# tests/unit/test_netgraph_unit.py

import allure
import numpy as np
import pytest

from hand_pose_tree.errors import BadInputSizeError, InvalidParameterError, NonFiniteActivationError
from hand_pose_tree.losses import GLOBAL_HEAD, HEAD_SIZES, LOCAL_HEADS, VIEWPOINT_HEAD
from hand_pose_tree.netgraph import (
    build_fc_branching,
    build_network,
    build_single_channel,
    build_tree_network,
    conv_parameter_count,
    single_channel_widths,
)
from hand_pose_tree.netgraph import gradcheck
from hand_pose_tree.netgraph.layers import dense, dropout, make_layer
from hand_pose_tree.netgraph.main import INPUT, NetGraph


@pytest.fixture(scope="module")
def tree():
    return build_tree_network(96, "desk", dropout_rate=0.3, seed=0)


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Gradientes por capa")
@pytest.mark.unit
@pytest.mark.netgraph
@pytest.mark.parametrize("kind", gradcheck.LAYER_PROBES)
def test_gradiente_de_cada_capa(kind):
    """Cada tipo de capa pasa la comprobación por diferencias centrales (entrada y parámetros)."""
    result = gradcheck.check_layer(kind, np.random.default_rng(11))
    assert result.checked > 0
    assert result.passed, f"{kind}: {result.max_relative_error:.3e}"


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Dropout")
@pytest.mark.unit
@pytest.mark.netgraph
def test_dropout_invertido(rng):
    """En evaluación es la identidad; en entrenamiento anula ≈ p y escala por 1/(1 − p)."""
    layer = make_layer(dropout(0.3), "drop")
    x = np.ones((200, 100))
    np.testing.assert_array_equal(layer.forward([x], False, None), x)
    out = layer.forward([x], True, rng)
    assert (out == 0.0).mean() == pytest.approx(0.3, abs=0.02)
    np.testing.assert_allclose(out[out != 0.0], 1.0 / 0.7)
    with pytest.raises(InvalidParameterError):
        layer.forward([x], True, None)


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Arquitectura en árbol")
@pytest.mark.unit
@pytest.mark.netgraph
def test_cabezas_y_profundidad_del_arbol(tree):
    """Cinco cabezas locales, punto de vista y global; cada camino convolucional tiene 6 convoluciones."""
    assert set(tree.heads) == set(LOCAL_HEADS.values()) | {VIEWPOINT_HEAD, GLOBAL_HEAD}
    paths = tree.conv_paths()
    assert len(paths) == 6
    assert set(paths) == {6}
    assert tree.nodes["index.b6.0"].layer.spec.kernel == 3


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Arquitectura en árbol")
@pytest.mark.unit
@pytest.mark.netgraph
def test_propagacion_del_arbol(tree, rng):
    """La pasada hacia delante da un vector por cabeza y la de vuelta un gradiente por parámetro."""
    batch = rng.uniform(-1.0, 1.0, size=(2, 1, 96, 96))
    outputs = tree.forward(batch, train=True, rng=np.random.default_rng(0))
    for head, values in outputs.items():
        assert values.shape == (2, HEAD_SIZES[head])
    grads = tree.backward({head: np.ones_like(v) for head, v in outputs.items()})
    assert list(grads) == list(tree.params)
    assert tree.input_gradient.shape == batch.shape
    assert any(np.abs(g).sum() > 0.0 for g in grads.values())


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Arquitectura en árbol")
@pytest.mark.unit
@pytest.mark.netgraph
def test_sin_fusion_de_punto_de_vista():
    """Sin fusión la palma solo alimenta la cabeza de punto de vista."""
    graph = build_tree_network(96, viewpoint_fusion=False)
    assert VIEWPOINT_HEAD in graph.heads
    assert "palm.global.0" not in graph.nodes
    assert len(graph.nodes["fusion.concat"].inputs) == 5


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Tamaño de entrada")
@pytest.mark.unit
@pytest.mark.netgraph
def test_tamanos_de_entrada():
    """96 y 192 son válidos (núcleo final 3 o 6); cualquier otro tamaño se rechaza."""
    big = build_tree_network(192)
    assert big.nodes["index.b6.0"].layer.spec.kernel == 6
    for size in (64, 100, 128):
        with pytest.raises(BadInputSizeError):
            build_tree_network(size)


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Canal único")
@pytest.mark.unit
@pytest.mark.netgraph
def test_canal_unico_con_la_misma_capacidad(tree):
    """El canal único iguala la capacidad convolucional del árbol y solo regresa la pose global."""
    widths = single_channel_widths(96)
    single = build_single_channel(96)
    assert list(single.heads) == [GLOBAL_HEAD]
    gap = abs(conv_parameter_count(single) - conv_parameter_count(tree)) / conv_parameter_count(tree)
    assert gap < 0.05
    assert widths.conv[0] >= 16


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Ramificación densa")
@pytest.mark.unit
@pytest.mark.netgraph
def test_ramificacion_en_capas_densas():
    """La variante densa lleva las cabezas locales y de punto de vista sobre un único camino."""
    graph = build_fc_branching(96)
    assert set(graph.heads) == set(LOCAL_HEADS.values()) | {VIEWPOINT_HEAD}
    assert graph.conv_paths() == [6]
    with pytest.raises(InvalidParameterError):
        build_network("resnet", 96)


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Topología")
@pytest.mark.unit
@pytest.mark.netgraph
def test_hash_de_topologia():
    """El hash depende de la topología y no de la semilla."""
    a = build_fc_branching(96, seed=1)
    b = build_fc_branching(96, seed=2)
    c = build_fc_branching(96, dropout_rate=0.5)
    assert a.topology_hash() == b.topology_hash()
    assert a.topology_hash() != c.topology_hash()
    assert not np.array_equal(a.params["conv.b1.0/W"], b.params["conv.b1.0/W"])


@allure.tag("modulo:netgraph", "tipo:unitario")
@allure.feature("Motor de red")
@allure.story("Errores")
@pytest.mark.unit
@pytest.mark.netgraph
def test_grafo_sin_cabezas_y_activacion_no_finita(rng):
    """Un grafo sin cabezas no valida y una activación NaN nombra su capa."""
    graph = NetGraph((3,), seed=0)
    graph.add("hidden", dense(4), INPUT)
    with pytest.raises(InvalidParameterError):
        graph.validate()
    graph.add_head(VIEWPOINT_HEAD, "hidden")
    graph.validate()
    graph.params["hidden/W"][0, 0] = np.nan
    with pytest.raises(NonFiniteActivationError, match="hidden"):
        graph.forward(rng.normal(size=(2, 3)))
