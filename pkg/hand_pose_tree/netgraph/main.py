# hand_pose_tree/netgraph/main.py

"""
Grafo acíclico de capas con cabezas de salida con nombre, más los tres
constructores: árbol (tronco compartido que se ramifica hasta seis hojas y se
fusiona en la cabeza global), canal único y ramificación en capas densas.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional

import numpy as np
from loguru import logger

from hand_pose_tree.errors import (
    BadInputSizeError,
    InvalidParameterError,
    NonFiniteActivationError,
    NonFiniteGradientError,
    ShapeMismatchError,
)
from hand_pose_tree.losses import GLOBAL_HEAD, HEAD_SIZES, LOCAL_HEADS, VIEWPOINT_HEAD
from hand_pose_tree.netgraph.layers import (
    CONCAT_SPEC,
    MAXPOOL_SPEC,
    RELU_SPEC,
    SPLIT_SPEC,
    Layer,
    LayerSpec,
    conv3x3,
    conv6x6,
    dense,
    dropout,
    make_layer,
)

INPUT = "input"
ARCH_TREE = "tree"
ARCH_SINGLE = "single"
ARCH_FC_BRANCH = "fcbranch"
ARCHITECTURES = (ARCH_TREE, ARCH_SINGLE, ARCH_FC_BRANCH)

# grupos del bloque 3 y hojas del bloque 4
TREE_GROUPS = {
    "index_middle": ("index", "middle"),
    "ring_pinky": ("ring", "pinky"),
    "thumb": ("thumb",),
    "palm": ("palm",),
}
TREE_LEAVES = ("index", "middle", "ring", "pinky", "thumb", "palm")


@dataclass(frozen=True)
class WidthPreset:
    name: str
    conv: tuple
    feature: int
    dense: int

    def scaled(self, factor: float) -> "WidthPreset":
        return WidthPreset(
            f"{self.name}x{factor:.2f}",
            tuple(max(1, int(round(c * factor))) for c in self.conv),
            max(1, int(round(self.feature * factor))),
            self.dense,
        )


PRESETS = {
    "desk": WidthPreset("desk", (16, 32, 48, 48, 64), 192, 256),
    "full": WidthPreset("full", (16, 32, 48, 48, 64), 192, 1024),
}


def width_preset(name: str) -> WidthPreset:
    if name not in PRESETS:
        raise InvalidParameterError(f"preset de anchura desconocido '{name}' ({', '.join(PRESETS)})")
    return PRESETS[name]


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: tuple
    shape: tuple = ()


class ParameterStore(OrderedDict):
    """Parámetros entrenables en orden de declaración: ``<capa>/<W|b>`` -> array."""

    def count(self, prefix: Optional[str] = None) -> int:
        return int(sum(v.size for k, v in self.items() if prefix is None or k.startswith(prefix)))

    def zeros_like(self) -> "ParameterStore":
        return ParameterStore((k, np.zeros_like(v)) for k, v in self.items())


class NetGraph:
    """DAG de capas; los nodos se añaden en orden topológico."""

    def __init__(self, input_shape: tuple, seed: int = 0, description: Optional[dict] = None):
        self.input_shape = tuple(input_shape)
        self.seed = seed
        self.description = dict(description or {})
        self.nodes: "OrderedDict[str, Node]" = OrderedDict()
        self.heads: "OrderedDict[str, str]" = OrderedDict()
        self.params = ParameterStore()
        self.input_gradient: Optional[np.ndarray] = None
        self._rng = np.random.default_rng(seed)

    def shape_of(self, name: str) -> tuple:
        return self.input_shape if name == INPUT else self.nodes[name].shape

    def add(self, name: str, spec: LayerSpec, *inputs: str) -> str:
        if name in self.nodes or name == INPUT:
            raise InvalidParameterError(f"nodo duplicado '{name}'")
        for src in inputs:
            if src != INPUT and src not in self.nodes:
                raise InvalidParameterError(f"'{name}' depende de un nodo inexistente '{src}'")
        layer = make_layer(spec, name)
        shapes = [self.shape_of(src) for src in inputs]
        shape = layer.output_shape(shapes)
        layer.init_params(shapes, self._rng)
        for key, value in layer.params.items():
            self.params[f"{name}/{key}"] = value
        self.nodes[name] = Node(name, layer, tuple(inputs), shape)
        return name

    def chain(self, prefix: str, source: str, specs: list) -> str:
        current = source
        for i, spec in enumerate(specs):
            current = self.add(f"{prefix}.{i}", spec, current)
        return current

    def add_head(self, head: str, node: str) -> None:
        expected = HEAD_SIZES[head]
        if self.nodes[node].shape != (expected,):
            raise ShapeMismatchError(f"cabeza '{head}' con forma {self.nodes[node].shape}, se esperaba ({expected},)")
        self.heads[head] = node

    def validate(self) -> None:
        """Comprueba aciclicidad (orden topológico de Kahn) y que hay al menos una cabeza."""
        indegree = {name: len(node.inputs) for name, node in self.nodes.items()}
        children = {name: [] for name in self.nodes}
        ready = []
        for name, node in self.nodes.items():
            for src in node.inputs:
                if src == INPUT:
                    indegree[name] -= 1
                else:
                    children[src].append(name)
            if indegree[name] == 0:
                ready.append(name)
        visited = 0
        while ready:
            current = ready.pop()
            visited += 1
            for child in children[current]:
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
        if visited != len(self.nodes):
            raise InvalidParameterError("el grafo contiene un ciclo")
        if not self.heads:
            raise InvalidParameterError("el grafo no tiene cabezas de salida")

    def bind(self) -> None:
        """Re-enlaza los arrays del almacén con las capas (tras cargar o sustituir parámetros)."""
        for key, value in self.params.items():
            node, pname = key.rsplit("/", 1)
            self.nodes[node].layer.params[pname] = value

    def topology(self) -> list:
        return [
            {"name": n.name, "layer": n.layer.spec.as_dict(), "inputs": list(n.inputs), "shape": list(n.shape)}
            for n in self.nodes.values()
        ]

    def topology_hash(self) -> str:
        payload = json.dumps(
            {"input": list(self.input_shape), "nodes": self.topology(), "heads": dict(self.heads)},
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()

    def conv_paths(self) -> list:
        """Número de convoluciones en cada camino entrada -> hoja convolucional."""
        counts = {}
        for name, node in self.nodes.items():
            inherited = max((counts.get(src, 0) for src in node.inputs), default=0)
            counts[name] = inherited + (1 if node.layer.spec.kind.startswith("conv") else 0)
        conv_leaves = []
        for name, node in self.nodes.items():
            if node.layer.spec.kind.startswith("conv"):
                consumers = [n for n in self.nodes.values() if name in n.inputs]
                downstream_conv = any(self._reaches_conv(c.name) for c in consumers)
                if not downstream_conv:
                    conv_leaves.append(counts[name])
        return conv_leaves

    def _reaches_conv(self, start: str) -> bool:
        stack, seen = [start], set()
        while stack:
            name = stack.pop()
            if name in seen:
                continue
            seen.add(name)
            if self.nodes[name].layer.spec.kind.startswith("conv"):
                return True
            stack.extend(n.name for n in self.nodes.values() if name in n.inputs)
        return False

    def forward(self, batch, train: bool = False, rng: Optional[np.random.Generator] = None) -> dict:
        x = np.asarray(batch, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatchError(f"entrada {x.shape[1:]}, se esperaba {self.input_shape}")
        values = {INPUT: x}
        for name, node in self.nodes.items():
            out = node.layer.forward([values[src] for src in node.inputs], train, rng)
            if not np.all(np.isfinite(out)):
                raise NonFiniteActivationError(name)
            values[name] = out
        return {head: values[node] for head, node in self.heads.items()}

    def backward(self, head_grads: dict) -> ParameterStore:
        """Retropropaga los gradientes de las cabezas; las cabezas ausentes reciben cero."""
        pending = {}
        for head, node in self.heads.items():
            if head in head_grads:
                g = np.asarray(head_grads[head], dtype=np.float64)
                pending[node] = pending.get(node, 0.0) + g
        for name in reversed(self.nodes):
            node = self.nodes[name]
            node.layer.grads = {}
            if name not in pending:
                continue
            grad = pending.pop(name)
            input_grads = node.layer.backward(grad)
            for src, g in zip(node.inputs, input_grads):
                pending[src] = pending.get(src, 0.0) + g

        grads = ParameterStore()
        for key, value in self.params.items():
            node, pname = key.rsplit("/", 1)
            g = self.nodes[node].layer.grads.get(pname)
            g = np.zeros_like(value) if g is None else g
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(node)
            grads[key] = g
        self.input_gradient = pending.get(INPUT)
        return grads

    def summary(self) -> str:
        return (f"{self.description.get('arch', '?')}: {len(self.nodes)} nodos, "
                f"{self.params.count()} parámetros, cabezas {list(self.heads)}")


def _check_input_size(input_size: int) -> int:
    if input_size <= 0 or input_size % 32 or input_size // 32 not in (3, 6):
        raise BadInputSizeError(f"tamaño de entrada {input_size}: debe ser 96 o 192 (múltiplo de 32 con 3 o 6 tras 5 reducciones)")
    return input_size // 32


def _conv_block(width: int) -> list:
    return [conv3x3(width), RELU_SPEC, MAXPOOL_SPEC]


def _feature_block(width: int, spatial: int) -> list:
    return [conv6x6(width, kernel=spatial), RELU_SPEC]


def _head(hidden: int, rate: float, out: int, head_init: str) -> list:
    return [dense(hidden), RELU_SPEC, dropout(rate), dense(out, init=head_init)]


def build_tree_network(input_size: int = 96, preset: str = "desk", dropout_rate: float = 0.3, seed: int = 0,
                       viewpoint_fusion: bool = True, head_init: str = "fan_in") -> NetGraph:
    """
    Bloques 1-2 compartidos; el bloque 3 se divide en {índice+medio}, {anular+meñique},
    {pulgar} y {palma}; el bloque 4 separa las parejas. Cada hoja termina con el bloque 6
    y lleva una cabeza local (la palma regresa el cuaternión) y una sub-cabeza global.
    """
    spatial = _check_input_size(input_size)
    widths = width_preset(preset)
    graph = NetGraph((1, input_size, input_size), seed, {
        "arch": ARCH_TREE, "input_size": input_size, "preset": preset, "dropout": dropout_rate,
        "viewpoint_fusion": viewpoint_fusion, "head_init": head_init,
    })
    trunk = graph.chain("trunk.b1", INPUT, _conv_block(widths.conv[0]))
    trunk = graph.chain("trunk.b2", trunk, _conv_block(widths.conv[1]))
    trunk = graph.add("trunk.split", SPLIT_SPEC, trunk)

    leaves = {}
    for group, members in TREE_GROUPS.items():
        g = graph.chain(f"{group}.b3", trunk, _conv_block(widths.conv[2]))
        if len(members) > 1:
            g = graph.add(f"{group}.split", SPLIT_SPEC, g)
        for member in members:
            leaves[member] = graph.chain(f"{member}.b4", g, _conv_block(widths.conv[3]))

    fusion_inputs = []
    for leaf in TREE_LEAVES:
        x = graph.chain(f"{leaf}.b5", leaves[leaf], _conv_block(widths.conv[4]))
        x = graph.chain(f"{leaf}.b6", x, _feature_block(widths.feature, spatial))
        x = graph.add(f"{leaf}.features", SPLIT_SPEC, x)
        if leaf == "palm":
            out = graph.chain("palm.viewpoint", x, _head(widths.dense, dropout_rate, 4, head_init))
            graph.add_head(VIEWPOINT_HEAD, out)
            if not viewpoint_fusion:
                continue
        else:
            out = graph.chain(f"{leaf}.local", x, _head(widths.dense, dropout_rate, 24, head_init))
            graph.add_head(LOCAL_HEADS[leaf], out)
        sub = graph.chain(f"{leaf}.global", x, [dense(widths.dense), RELU_SPEC, dropout(dropout_rate),
                                               dense(widths.dense), RELU_SPEC])
        fusion_inputs.append(sub)

    fused = graph.add("fusion.concat", CONCAT_SPEC, *fusion_inputs)
    fused = graph.chain("fusion", fused, [dropout(dropout_rate), dense(HEAD_SIZES[GLOBAL_HEAD], init=head_init)])
    graph.add_head(GLOBAL_HEAD, fused)
    graph.validate()
    logger.debug(f"[RED] {graph.summary()}")
    return graph


def conv_parameter_count(graph: NetGraph) -> int:
    return int(sum(
        sum(p.size for p in node.layer.params.values())
        for node in graph.nodes.values() if node.layer.spec.kind.startswith("conv")
    ))


def _single_chain(graph: NetGraph, widths: WidthPreset, spatial: int) -> str:
    x = INPUT
    for block, width in enumerate(widths.conv, start=1):
        x = graph.chain(f"conv.b{block}", x, _conv_block(width))
    x = graph.chain("conv.b6", x, _feature_block(widths.feature, spatial))
    return graph.add("features", SPLIT_SPEC, x)


def _block_count(c_out: int, c_in: int, k: int = 3) -> int:
    return c_out * c_in * k * k + c_out


def _conv_count(widths: WidthPreset, spatial: int) -> int:
    c = (1,) + tuple(widths.conv)
    return (sum(_block_count(c[i + 1], c[i]) for i in range(len(widths.conv)))
            + _block_count(widths.feature, c[-1], spatial))


def _tree_conv_count(widths: WidthPreset, spatial: int) -> int:
    c = widths.conv
    return (_block_count(c[0], 1) + _block_count(c[1], c[0]) + len(TREE_GROUPS) * _block_count(c[2], c[1])
            + len(TREE_LEAVES) * (_block_count(c[3], c[2]) + _block_count(c[4], c[3])
                                  + _block_count(widths.feature, c[4], spatial)))


def single_channel_widths(input_size: int = 96, preset: str = "desk") -> WidthPreset:
    """Anchuras del canal único cuya capacidad convolucional iguala la del árbol."""
    spatial = _check_input_size(input_size)
    base = width_preset(preset)
    target = _tree_conv_count(base, spatial)
    best, best_gap = base, float("inf")
    for step in range(100, 401):
        candidate = base.scaled(step / 100.0)
        gap = abs(_conv_count(candidate, spatial) - target) / target
        if gap < best_gap:
            best, best_gap = candidate, gap
    return best


def build_single_channel(input_size: int = 96, preset: str = "desk", dropout_rate: float = 0.3, seed: int = 0,
                         head_init: str = "fan_in") -> NetGraph:
    """Un único camino de 6 bloques con la misma capacidad convolucional que el árbol; solo cabeza global."""
    spatial = _check_input_size(input_size)
    widths = single_channel_widths(input_size, preset)
    graph = NetGraph((1, input_size, input_size), seed, {
        "arch": ARCH_SINGLE, "input_size": input_size, "preset": preset, "dropout": dropout_rate,
        "head_init": head_init,
    })
    x = _single_chain(graph, widths, spatial)
    out = graph.chain("global", x, [dense(widths.dense), RELU_SPEC, dropout(dropout_rate),
                                    dense(widths.dense), RELU_SPEC, dropout(dropout_rate),
                                    dense(HEAD_SIZES[GLOBAL_HEAD], init=head_init)])
    graph.add_head(GLOBAL_HEAD, out)
    graph.validate()
    logger.debug(f"[RED] {graph.summary()} (anchuras {widths.conv}, rasgo {widths.feature})")
    return graph


def build_fc_branching(input_size: int = 96, preset: str = "desk", dropout_rate: float = 0.3, seed: int = 0,
                       head_init: str = "fan_in") -> NetGraph:
    """Un camino convolucional del tamaño de una rama del árbol; cabezas locales y de punto de vista en capas densas."""
    spatial = _check_input_size(input_size)
    widths = width_preset(preset)
    graph = NetGraph((1, input_size, input_size), seed, {
        "arch": ARCH_FC_BRANCH, "input_size": input_size, "preset": preset, "dropout": dropout_rate,
        "head_init": head_init,
    })
    x = _single_chain(graph, widths, spatial)
    for finger, head in LOCAL_HEADS.items():
        graph.add_head(head, graph.chain(f"{finger}.local", x, _head(widths.dense, dropout_rate, 24, head_init)))
    graph.add_head(VIEWPOINT_HEAD, graph.chain("palm.viewpoint", x, _head(widths.dense, dropout_rate, 4, head_init)))
    graph.validate()
    logger.debug(f"[RED] {graph.summary()}")
    return graph


BUILDERS = {
    ARCH_TREE: build_tree_network,
    ARCH_SINGLE: build_single_channel,
    ARCH_FC_BRANCH: build_fc_branching,
}


def build_network(arch: str, input_size: int = 96, preset: str = "desk", **kwargs) -> NetGraph:
    if arch not in BUILDERS:
        raise InvalidParameterError(f"arquitectura desconocida '{arch}' ({', '.join(ARCHITECTURES)})")
    return BUILDERS[arch](input_size, preset, **kwargs)


def rebuild(description: dict) -> NetGraph:
    """Reconstruye un grafo desde su descripción (cabecera de checkpoint)."""
    kwargs = {k: v for k, v in description.items() if k not in ("arch", "input_size", "preset")}
    kwargs["dropout_rate"] = kwargs.pop("dropout", 0.3)
    return build_network(description["arch"], description["input_size"], description["preset"], **kwargs)
