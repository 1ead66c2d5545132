# hand_pose_tree/synth_render/dataset_io.py

"""
Formato de dataset en disco (versión 1):

- ``NNNNNN.depth.f32``: profundidad en bruto, float32 little-endian por filas, mm, 0 = ausente.
- ``NNNNNN.json``: ``SampleRecord`` (cámara, cubo, centro de la nube, articulaciones,
  cuaternión, estados de dedo y procedencia opcional).
- ``manifest.json``: versión del formato y lista ordenada de muestras.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from hand_pose_tree.depth_geometry import CameraModel, CropTransform, DepthFrame
from hand_pose_tree.errors import DatasetFormatError, OutputDirectoryError
from hand_pose_tree.hand_model import JointSet, Quaternion
from hand_pose_tree.losses import FingerState

FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class CameraRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    fx: float
    fy: float
    px: float
    py: float


class FingerStateRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")

    state: int = Field(ge=1, le=4)
    e_g: List[float] = Field(min_length=3, max_length=3)


class SampleRecord(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "sample_id": 0,
                "width": 256,
                "height": 256,
                "camera": {"fx": 588.0, "fy": 588.0, "px": 128.0, "py": 128.0},
                "cube_mm": 250.0,
                "cloud_center_world": [3.2, 41.0, 742.5],
                "cloud_center_image": [130.5, 160.5, 742.5],
                "joints": [[0.0, 0.0, 750.0]] * 20,
                "quaternion": [1.0, 0.0, 0.0, 0.0],
                "finger_states": [{"state": 1, "e_g": [0.0, 1.0, 0.0]}] * 4,
            }
        },
    )

    sample_id: int = Field(ge=0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)
    camera: CameraRecord
    cube_mm: float = Field(gt=0)
    cloud_center_world: List[float] = Field(min_length=3, max_length=3)
    cloud_center_image: List[float] = Field(min_length=3, max_length=3)
    joints: List[List[float]] = Field(min_length=20, max_length=20)
    quaternion: List[float] = Field(min_length=4, max_length=4)
    finger_states: List[FingerStateRecord] = Field(min_length=4, max_length=4)
    provenance: Optional[dict] = None


class Manifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int = FORMAT_VERSION
    count: int = 0
    samples: List[str] = Field(default_factory=list)


@dataclass
class SceneSample:
    sample_id: int
    frame: DepthFrame
    joints: JointSet
    quaternion: Quaternion
    camera: CameraModel
    center_world: np.ndarray
    center_image: np.ndarray
    cube: float
    finger_states: list
    provenance: Optional[dict] = field(default=None)

    def crop_transform(self, size) -> CropTransform:
        return CropTransform(self.center_world, self.center_image, self.cube, tuple(size), self.camera)

    def zero_mean_joints(self) -> np.ndarray:
        return self.joints.joints - self.center_world

    def to_record(self) -> SampleRecord:
        return SampleRecord(
            sample_id=self.sample_id,
            width=self.frame.width,
            height=self.frame.height,
            camera=CameraRecord(**self.camera.as_dict()),
            cube_mm=float(self.cube),
            cloud_center_world=[float(v) for v in self.center_world],
            cloud_center_image=[float(v) for v in self.center_image],
            joints=[[float(v) for v in row] for row in self.joints.joints],
            quaternion=[float(v) for v in self.quaternion.as_array()],
            finger_states=[FingerStateRecord(**s.to_dict()) for s in self.finger_states],
            provenance=self.provenance,
        )


def sample_stem(sample_id: int) -> str:
    return f"{sample_id:06d}"


def prepare_output_dir(path: str) -> None:
    """El directorio de salida debe no existir o estar vacío."""
    if os.path.exists(path):
        if not os.path.isdir(path):
            raise OutputDirectoryError(f"la salida no es un directorio: {path}")
        if os.listdir(path):
            raise OutputDirectoryError(f"el directorio de salida no está vacío: {path}")
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise OutputDirectoryError(f"no se puede crear {path}: {e}") from e


def write_sample(directory: str, sample: SceneSample) -> str:
    stem = sample_stem(sample.sample_id)
    depth_path = os.path.join(directory, f"{stem}.depth.f32")
    json_path = os.path.join(directory, f"{stem}.json")
    try:
        np.asarray(sample.frame.depth, dtype="<f4").tofile(depth_path)
        with open(json_path, "w", encoding="utf-8") as f:
            f.write(sample.to_record().model_dump_json(indent=2))
            f.write("\n")
    except OSError as e:
        raise OutputDirectoryError(f"error escribiendo {json_path}: {e}") from e
    return stem


def write_manifest(directory: str, stems: list) -> Manifest:
    manifest = Manifest(count=len(stems), samples=list(stems))
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path, "w", encoding="utf-8") as f:
            f.write(manifest.model_dump_json(indent=2))
            f.write("\n")
    except OSError as e:
        raise OutputDirectoryError(f"error escribiendo {path}: {e}") from e
    return manifest


def write_dataset(directory: str, samples) -> Manifest:
    prepare_output_dir(directory)
    stems = [write_sample(directory, s) for s in samples]
    manifest = write_manifest(directory, stems)
    logger.info(f"[DATASET] 📝 {manifest.count} muestras escritas en {directory}")
    return manifest


def read_manifest(directory: str) -> Manifest:
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path, encoding="utf-8") as f:
            manifest = Manifest.model_validate_json(f.read())
    except OSError as e:
        raise DatasetFormatError(f"no se puede leer {path}: {e}") from e
    except ValidationError as e:
        raise DatasetFormatError(f"manifest inválido en {path}: {e.error_count()} errores") from e
    if manifest.format_version != FORMAT_VERSION:
        raise DatasetFormatError(f"versión de formato {manifest.format_version} no soportada en {path}")
    return manifest


def read_sample(directory: str, stem: str) -> SceneSample:
    json_path = os.path.join(directory, f"{stem}.json")
    depth_path = os.path.join(directory, f"{stem}.depth.f32")
    try:
        with open(json_path, encoding="utf-8") as f:
            record = SampleRecord.model_validate_json(f.read())
        depth = np.fromfile(depth_path, dtype="<f4")
    except OSError as e:
        raise DatasetFormatError(f"no se puede leer la muestra {stem} en {directory}: {e}") from e
    except ValidationError as e:
        raise DatasetFormatError(f"registro inválido {json_path}: {e.error_count()} errores") from e
    if depth.size != record.width * record.height:
        raise DatasetFormatError(f"{depth_path}: {depth.size} valores, se esperaban {record.width * record.height}")

    return SceneSample(
        sample_id=record.sample_id,
        frame=DepthFrame(depth.reshape(record.height, record.width).astype(np.float64)),
        joints=JointSet(np.array(record.joints)),
        quaternion=Quaternion.from_array(record.quaternion),
        camera=CameraModel(**record.camera.model_dump()),
        center_world=np.array(record.cloud_center_world),
        center_image=np.array(record.cloud_center_image),
        cube=record.cube_mm,
        finger_states=[FingerState(s.state, s.e_g) for s in record.finger_states],
        provenance=record.provenance,
    )


def read_dataset(directory: str) -> list:
    manifest = read_manifest(directory)
    samples = [read_sample(directory, stem) for stem in manifest.samples]
    logger.info(f"[DATASET] {len(samples)} muestras leídas de {directory}")
    return samples


def dumps_record(sample: SceneSample) -> str:
    """Serialización canónica (usada por las comprobaciones de determinismo)."""
    return json.dumps(sample.to_record().model_dump(), sort_keys=True)
