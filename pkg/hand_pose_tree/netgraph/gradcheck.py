# hand_pose_tree/netgraph/gradcheck.py

"""Diferencias finitas de cada tipo de capa sobre grafos mínimos, respecto a entrada y parámetros."""

from __future__ import annotations

import numpy as np
from loguru import logger

from hand_pose_tree.losses import HEAD_SIZES, GradCheckResult, finite_difference_check
from hand_pose_tree.netgraph.layers import (
    CONCAT_SPEC,
    MAXPOOL_SPEC,
    RELU_SPEC,
    SPLIT_SPEC,
    conv3x3,
    conv6x6,
    dense,
    dropout,
)
from hand_pose_tree.netgraph.main import INPUT, NetGraph

PROBE_HEAD = "viewpoint"


def _probe(kind: str, seed: int) -> NetGraph:
    """Grafo diminuto que aísla ``kind`` y termina en una cabeza de 4 valores."""
    out = HEAD_SIZES[PROBE_HEAD]
    graph = NetGraph((2, 6, 6), seed, {"arch": f"probe:{kind}"})
    if kind == "conv3x3":
        x = graph.add("probe", conv3x3(2), INPUT)
    elif kind == "conv6x6":
        x = graph.add("probe", conv6x6(3), INPUT)
    elif kind == "maxpool2x2":
        x = graph.add("probe", MAXPOOL_SPEC, INPUT)
    elif kind == "relu":
        x = graph.add("probe", RELU_SPEC, INPUT)
    elif kind == "dense":
        x = graph.add("probe", dense(5), INPUT)
    elif kind == "dropout":
        x = graph.add("probe", dropout(0.4), INPUT)
    elif kind == "concat":
        a = graph.add("a", dense(3), INPUT)
        b = graph.add("b", dense(2), INPUT)
        x = graph.add("probe", CONCAT_SPEC, a, b)
    elif kind == "split":
        s = graph.add("probe", SPLIT_SPEC, INPUT)
        a = graph.add("a", dense(3), s)
        b = graph.add("b", dense(3), s)
        x = graph.add("join", CONCAT_SPEC, a, b)
    else:
        raise ValueError(kind)
    graph.add_head(PROBE_HEAD, graph.add("readout", dense(out), x))
    graph.validate()
    return graph


LAYER_PROBES = ("conv3x3", "conv6x6", "maxpool2x2", "relu", "dense", "dropout", "concat", "split")


def check_layer(kind: str, rng: np.random.Generator, eps: float = 1e-6, batch: int = 2) -> GradCheckResult:
    """Pérdida escalar Σ w·salida; comprueba el gradiente de la entrada y de cada parámetro."""
    graph = _probe(kind, int(rng.integers(1 << 31)))
    x0 = rng.normal(size=(batch,) + graph.input_shape)
    weights = rng.normal(size=(batch, HEAD_SIZES[PROBE_HEAD]))
    mask_seed = int(rng.integers(1 << 31))
    train = kind == "dropout"

    def run(x):
        mask_rng = np.random.default_rng(mask_seed) if train else None
        out = graph.forward(x, train=train, rng=mask_rng)[PROBE_HEAD]
        return float(np.sum(weights * out))

    def input_loss(x):
        value = run(x)
        graph.backward({PROBE_HEAD: weights})
        return value, graph.input_gradient

    results = [finite_difference_check(input_loss, x0, eps)]
    for key in list(graph.params):
        def param_loss(p, key=key):
            graph.params[key][...] = p
            value = run(x0)
            grads = graph.backward({PROBE_HEAD: weights})
            return value, grads[key]
        original = graph.params[key].copy()
        results.append(finite_difference_check(param_loss, original, eps))
        graph.params[key][...] = original
    return GradCheckResult(
        max(r.max_relative_error for r in results),
        sum(r.checked for r in results),
        sum(r.skipped for r in results),
    )


def run_suite(seed: int = 0, configurations: int = 100, eps: float = 1e-6) -> dict:
    """``configurations`` grafos aleatorios repartidos entre los tipos de capa."""
    rng = np.random.default_rng(seed)
    per_kind = max(1, -(-configurations // len(LAYER_PROBES)))
    results = {}
    for kind in LAYER_PROBES:
        runs = [check_layer(kind, rng, eps) for _ in range(per_kind)]
        results[kind] = GradCheckResult(
            max(r.max_relative_error for r in runs),
            sum(r.checked for r in runs),
            sum(r.skipped for r in runs),
        )
        r = results[kind]
        logger.info(f"[GRADCHECK] capa {kind}: error relativo máx {r.max_relative_error:.2e} "
                    f"({r.checked} coordenadas, {r.skipped} en bisagra)")
    return results
