# hand_pose_tree/netgraph/data.py

"""Preparación de ejemplos de entrenamiento y productor de lotes con cola acotada."""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from loguru import logger

from hand_pose_tree.depth_geometry import crop_and_normalize, estimate_normals, fill_background, network_input
from hand_pose_tree.errors import HandPoseError
from hand_pose_tree.hand_model import BRANCH_JOINTS, PALM_JOINTS
from hand_pose_tree.losses import GLOBAL_HEAD, LOCAL_HEADS, FrameContext, LossTarget


@dataclass
class TrainingExample:
    sample_id: int
    image: np.ndarray
    target: LossTarget
    context: FrameContext
    cube: float

    @property
    def half_cube(self) -> float:
        return self.cube / 2.0


def prepare_example(sample, input_size: int = 96) -> TrainingExample:
    """Recorte normalizado, fondo en cono, normales y ground truth de media cero de una ``SceneSample``."""
    crop, xform = crop_and_normalize(sample.frame, sample.camera, sample.center_world, sample.cube,
                                     (input_size, input_size))
    context = FrameContext(fill_background(crop), xform, estimate_normals(crop))
    target = LossTarget(sample.zero_mean_joints(), sample.quaternion.canonical().as_array(), sample.finger_states)
    return TrainingExample(sample.sample_id, network_input(crop, sample.cube)[None], target, context, sample.cube)


def prepare_examples(samples, input_size: int = 96) -> list:
    examples = []
    for sample in samples:
        try:
            examples.append(prepare_example(sample, input_size))
        except HandPoseError as e:
            logger.warning(f"[DATOS] ⚠️ muestra {sample.sample_id} descartada: {e}")
    logger.info(f"[DATOS] {len(examples)}/{len(samples)} ejemplos preparados ({input_size}x{input_size})")
    return examples


def split_items(items: list, val_fraction: float, seed: int) -> tuple[list, list]:
    """Partición determinista entrenamiento/validación de ejemplos o muestras."""
    order = np.random.default_rng([seed, 0xA11]).permutation(len(items))
    n_val = int(round(len(items) * val_fraction))
    if len(items) > 1:
        n_val = min(max(n_val, 1 if val_fraction > 0 else 0), len(items) - 1)
    val = [items[i] for i in sorted(order[:n_val])]
    train = [items[i] for i in sorted(order[n_val:])]
    return train, val


def stack_images(examples: list) -> np.ndarray:
    return np.stack([e.image for e in examples])


def assemble_pose(outputs: dict, index: int) -> np.ndarray:
    """
    Pose de 20 articulaciones (mm, media cero) de un ejemplo: la cabeza global si
    existe; si no, las cabezas locales con la palma promediada entre ramas.
    """
    if GLOBAL_HEAD in outputs:
        return np.asarray(outputs[GLOBAL_HEAD][index], dtype=np.float64).reshape(20, 3)
    joints = np.zeros((20, 3))
    palm = []
    for finger, head in LOCAL_HEADS.items():
        if head not in outputs:
            continue
        local = np.asarray(outputs[head][index], dtype=np.float64).reshape(8, 3)
        joints[list(BRANCH_JOINTS[finger][len(PALM_JOINTS):])] = local[len(PALM_JOINTS):]
        palm.append(local[:len(PALM_JOINTS)])
    if palm:
        joints[list(PALM_JOINTS)] = np.mean(palm, axis=0)
    return joints


class BatchPrefetcher:
    """
    Prepara lotes en un hilo productor y los entrega por una cola acotada,
    en el mismo orden en que se pidieron.
    """

    _DONE = object()

    def __init__(self, examples: list, order, batch_size: int, depth: int = 2):
        self.examples = examples
        self.order = np.asarray(order)
        self.batch_size = batch_size
        self._queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._error: Optional[BaseException] = None
        self._thread = threading.Thread(target=self._produce, daemon=True)

    def _produce(self):
        try:
            for start in range(0, len(self.order), self.batch_size):
                batch = [self.examples[i] for i in self.order[start:start + self.batch_size]]
                self._queue.put((stack_images(batch), batch))
        except BaseException as e:  # se relanza en el consumidor
            self._error = e
        finally:
            self._queue.put(self._DONE)

    def __iter__(self) -> Iterator[tuple]:
        self._thread.start()
        while True:
            item = self._queue.get()
            if item is self._DONE:
                break
            yield item
        self._thread.join()
        if self._error is not None:
            raise self._error
