# hand_pose_tree/netgraph/trainer.py

"""SGD con momento, checkpoints binarios versionados y bucle de entrenamiento por épocas."""

from __future__ import annotations

import csv
import json
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from hand_pose_tree.errors import CheckpointError, InvalidParameterError, OutputDirectoryError, ShapeMismatchError
from hand_pose_tree.losses import VIEWPOINT_HEAD, LossConfig, combined_loss
from hand_pose_tree.netgraph.data import BatchPrefetcher, assemble_pose, stack_images
from hand_pose_tree.netgraph.main import NetGraph, ParameterStore, rebuild

CHECKPOINT_MAGIC = b"HPTC"
CHECKPOINT_VERSION = 1
LOG_COLUMNS = ["epoch", "split", "mean_error_mm", "loss_local", "loss_global", "loss_appearance",
               "loss_dynamics", "loss_total", "learning_rate"]


class TrainerConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "batch_size": 50,
                "learning_rate": 0.001,
                "weight_decay": 0.0005,
                "momentum": 0.9,
                "epochs": 8,
                "lr_decay_epochs": [6],
                "seed": 0,
            }
        },
    )

    batch_size: int = Field(50, gt=0)
    learning_rate: float = Field(1e-3, gt=0.0)
    weight_decay: float = Field(0.0005, ge=0.0)
    momentum: float = Field(0.9, ge=0.0, lt=1.0)
    epochs: int = Field(8, gt=0)
    lr_decay_epochs: tuple[int, ...] = (6,)
    global_warmup_epochs: int = Field(0, ge=0)
    # escala de la pérdida en mm² hacia unidades de c/2 (1/125² con cubo de 250 mm)
    loss_scale: float = Field(6.4e-5, gt=0.0)
    prefetch_depth: int = Field(2, gt=0)
    seed: int = 0

    @field_validator("lr_decay_epochs")
    @classmethod
    def _sorted_epochs(cls, value):
        if any(e <= 0 for e in value) or list(value) != sorted(value):
            raise ValueError(f"épocas de decaimiento deben ser positivas y crecientes: {value}")
        return value

    @classmethod
    def desk(cls, **overrides) -> "TrainerConfig":
        return cls(**overrides)

    @classmethod
    def full(cls, **overrides) -> "TrainerConfig":
        values = {"learning_rate": 0.5e-6, "epochs": 30, "lr_decay_epochs": (20,), "loss_scale": 1.0}
        return cls(**{**values, **overrides})

    def learning_rate_at(self, epoch: int) -> float:
        """La tasa se divide por 10 en cada época de ``lr_decay_epochs`` alcanzada (épocas desde 0)."""
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.learning_rate * (0.1 ** drops)


def weight_decay_gradient(params: ParameterStore, decay: float) -> ParameterStore:
    return ParameterStore((k, decay * v) for k, v in params.items())


def sgd_step(params: ParameterStore, grads: ParameterStore, config: TrainerConfig,
             velocity: Optional[ParameterStore] = None, learning_rate: Optional[float] = None) -> ParameterStore:
    """
    velocity = momentum·velocity − lr·(grad + decay·param); param += velocity.
    Actualiza ``params`` y ``velocity`` en el sitio; los parámetros quedan en la
    rejilla de float32.
    """
    lr = config.learning_rate if learning_rate is None else learning_rate
    velocity = params.zeros_like() if velocity is None else velocity
    decay = weight_decay_gradient(params, config.weight_decay)
    for key, value in params.items():
        g = grads.get(key)
        if g is None or g.shape != value.shape or velocity[key].shape != value.shape:
            raise ShapeMismatchError(f"gradiente de '{key}' ausente o con forma distinta a {value.shape}")
        velocity[key] = config.momentum * velocity[key] - lr * (g + decay[key])
        value += velocity[key]
        value[...] = value.astype(np.float32)
    return params


def save_checkpoint(graph: NetGraph, path: str, metadata: Optional[dict] = None) -> None:
    """Cabecera (magia, versión, hash de topología, JSON) y tensores float32 little-endian en orden de declaración."""
    header = {
        "description": graph.description,
        "metadata": metadata or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in graph.params.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    try:
        with open(path, "wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(struct.pack("<I", CHECKPOINT_VERSION))
            f.write(bytes.fromhex(graph.topology_hash()))
            f.write(struct.pack("<I", len(blob)))
            f.write(blob)
            for value in graph.params.values():
                f.write(np.asarray(value, dtype="<f4").tobytes())
    except OSError as e:
        raise OutputDirectoryError(f"no se puede escribir el checkpoint {path}: {e}") from e


def load_checkpoint(path: str) -> tuple[NetGraph, dict]:
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"no se puede leer el checkpoint {path}: {e}") from e
    if data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: no es un checkpoint (firma {data[:4]!r})")
    if len(data) < 44:
        raise CheckpointError(f"{path}: cabecera truncada")
    (version,) = struct.unpack("<I", data[4:8])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: versión de checkpoint {version} no soportada (se espera {CHECKPOINT_VERSION})")
    stored_hash = data[8:40].hex()
    (length,) = struct.unpack("<I", data[40:44])
    try:
        header = json.loads(data[44:44 + length].decode("utf-8"))
        graph = rebuild(header["description"])
    except (ValueError, KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: cabecera ilegible: {e}") from e
    except InvalidParameterError as e:
        raise CheckpointError(f"{path}: descripción de red inválida: {e}") from e
    if graph.topology_hash() != stored_hash:
        raise CheckpointError(f"{path}: la topología no coincide con la red reconstruida")

    offset = 44 + length
    for tensor in header["tensors"]:
        name, shape = tensor["name"], tuple(tensor["shape"])
        if name not in graph.params or graph.params[name].shape != shape:
            raise CheckpointError(f"{path}: tensor inesperado '{name}' {shape}")
        size = int(np.prod(shape)) * 4
        if offset + size > len(data):
            raise CheckpointError(f"{path}: datos de tensores truncados en '{name}'")
        values = np.frombuffer(data, dtype="<f4", count=size // 4, offset=offset).reshape(shape)
        graph.params[name] = values.astype(np.float64)
        offset += size
    if offset != len(data):
        raise CheckpointError(f"{path}: {len(data) - offset} bytes sobrantes")
    graph.bind()
    return graph, header.get("metadata", {})


def scaled_outputs(outputs: dict, index: int, half_cube: float) -> dict:
    """Salidas de un ejemplo en mm (las cabezas de articulaciones regresan en unidades de c/2)."""
    return {head: (values[index] if head == VIEWPOINT_HEAD else values[index] * half_cube)
            for head, values in outputs.items()}


def mean_joint_error(pred, truth) -> float:
    return float(np.mean(np.linalg.norm(np.asarray(pred) - np.asarray(truth), axis=-1)))


def predict(graph: NetGraph, examples: list, batch_size: int = 50) -> tuple[np.ndarray, np.ndarray]:
    """Poses (N, 20, 3) en mm de media cero y cuaterniones (N, 4), en modo evaluación."""
    poses, quats = [], []
    for start in range(0, len(examples), batch_size):
        batch = examples[start:start + batch_size]
        outputs = graph.forward(stack_images(batch), train=False)
        for i, ex in enumerate(batch):
            poses.append(assemble_pose(outputs, i) * ex.half_cube)
            quats.append(outputs[VIEWPOINT_HEAD][i] if VIEWPOINT_HEAD in outputs else np.array([1.0, 0.0, 0.0, 0.0]))
    return np.array(poses).reshape(-1, 20, 3), np.array(quats).reshape(-1, 4)


def evaluate_examples(graph: NetGraph, examples: list, batch_size: int = 50) -> float:
    if not examples:
        return float("nan")
    poses, _ = predict(graph, examples, batch_size)
    truth = np.stack([ex.target.joints for ex in examples])
    return mean_joint_error(poses, truth)


@dataclass
class TrainingLog:
    rows: list = field(default_factory=list)
    best_epoch: int = -1
    best_error: float = float("inf")
    checkpoint: Optional[str] = None

    def write_csv(self, path: str) -> None:
        try:
            with open(path, "w", newline="", encoding="utf-8") as f:
                writer = csv.DictWriter(f, fieldnames=LOG_COLUMNS)
                writer.writeheader()
                for row in self.rows:
                    writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
        except OSError as e:
            raise OutputDirectoryError(f"no se puede escribir el log {path}: {e}") from e


def train_step(graph: NetGraph, images: np.ndarray, batch: list, loss_config: LossConfig,
               config: TrainerConfig, velocity: ParameterStore, learning_rate: float,
               rng: np.random.Generator) -> dict:
    """Un paso de SGD sobre un lote; devuelve la media por ejemplo de cada término."""
    outputs = graph.forward(images, train=True, rng=rng)
    head_grads = {head: np.zeros_like(values) for head, values in outputs.items()}
    totals = {"loss_local": 0.0, "loss_global": 0.0, "loss_appearance": 0.0, "loss_dynamics": 0.0, "loss_total": 0.0}
    n = len(batch)
    for i, ex in enumerate(batch):
        report = combined_loss(scaled_outputs(outputs, i, ex.half_cube), ex.target, ex.context, loss_config)
        for key, value in report.as_row().items():
            totals[key] += value / n
        for head, grad in report.gradients.items():
            scale = 1.0 if head == VIEWPOINT_HEAD else ex.half_cube
            head_grads[head][i] = grad * scale * config.loss_scale / n
    grads = graph.backward(head_grads)
    sgd_step(graph.params, grads, config, velocity, learning_rate)
    return totals


def train(graph: NetGraph, train_examples: list, val_examples: list, config: TrainerConfig,
          loss_config: LossConfig, out_dir: Optional[str] = None, metadata: Optional[dict] = None) -> TrainingLog:
    """
    Entrena por épocas; registra error medio y términos de pérdida por época y
    guarda el mejor modelo según validación (o entrenamiento sin validación).
    Determinista dada ``config.seed``.
    """
    if not train_examples:
        raise InvalidParameterError("el conjunto de entrenamiento está vacío")
    log = TrainingLog()
    velocity = graph.params.zeros_like()
    checkpoint = os.path.join(out_dir, "best.ckpt") if out_dir else None
    logger.info(f"[ENTRENAMIENTO] 🚀 {graph.summary()}; {len(train_examples)} ejemplos de entrenamiento, "
                f"{len(val_examples)} de validación, {config.epochs} épocas")

    for epoch in range(config.epochs):
        lr = config.learning_rate_at(epoch)
        epoch_loss = loss_config
        if epoch < config.global_warmup_epochs:
            epoch_loss = loss_config.model_copy(update={"lambda_global": 0.0})
        order = np.random.default_rng([config.seed, epoch]).permutation(len(train_examples))
        sums = {}
        batches = 0
        prefetcher = BatchPrefetcher(train_examples, order, config.batch_size, config.prefetch_depth)
        for b, (images, batch) in enumerate(prefetcher):
            rng = np.random.default_rng([config.seed, epoch, b])
            terms = train_step(graph, images, batch, epoch_loss, config, velocity, lr, rng)
            for key, value in terms.items():
                sums[key] = sums.get(key, 0.0) + value
            batches += 1
        losses = {key: value / batches for key, value in sums.items()}

        train_error = evaluate_examples(graph, train_examples, config.batch_size)
        log.rows.append({"epoch": epoch, "split": "train", "mean_error_mm": train_error, **losses,
                         "learning_rate": lr})
        monitored = train_error
        if val_examples:
            monitored = evaluate_examples(graph, val_examples, config.batch_size)
            log.rows.append({"epoch": epoch, "split": "val", "mean_error_mm": monitored,
                             **{key: float("nan") for key in losses}, "learning_rate": lr})
        logger.info(f"[ENTRENAMIENTO] época {epoch}: lr {lr:.2e}, pérdida {losses.get('loss_total', 0.0):.4f}, "
                    f"error entrenamiento {train_error:.2f} mm, monitorizado {monitored:.2f} mm")

        if monitored < log.best_error:
            log.best_error, log.best_epoch = monitored, epoch
            if checkpoint:
                save_checkpoint(graph, checkpoint, {**(metadata or {}), "epoch": epoch, "error_mm": monitored})
                log.checkpoint = checkpoint

    if out_dir:
        log.write_csv(os.path.join(out_dir, "training_log.csv"))
    logger.info(f"[ENTRENAMIENTO] ✅ mejor época {log.best_epoch} con {log.best_error:.2f} mm")
    return log
