# hand_pose_tree/eval_cli/metrics.py

"""
Métricas de evaluación (error medio 3D y curvas de tasa de acierto), sustitución
de la palma por la del punto de vista y emisión de ``report.csv`` / ``curves.svg``.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import matplotlib
import numpy as np
from loguru import logger

from hand_pose_tree.errors import DatasetFormatError, InvalidParameterError, OutputDirectoryError, ShapeMismatchError
from hand_pose_tree.hand_model import FINGERTIPS, PALM_JOINTS, REFERENCE_PALM, Joint, palm_from_viewpoint
from hand_pose_tree.synth_render import prepare_output_dir

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

THRESHOLDS = tuple(range(0, 81))
REPORT_CSV = "report.csv"
CURVES_SVG = "curves.svg"
CSV_COLUMNS = ["metric", "joint", "threshold_mm", "value"]
SUCCESS_MAX = "success_rate_max"
SUCCESS_MEAN = "success_rate_mean"
JOINT_ERROR = "mean_error_mm"

JOINT_SUBSETS = {
    "all": tuple(Joint),
    "palm": tuple(PALM_JOINTS),
    "fingertips": tuple(FINGERTIPS),
}


@dataclass
class EvalReport:
    mean_error: float
    per_joint: np.ndarray
    joints: tuple
    thresholds: np.ndarray
    success_max: np.ndarray
    success_mean: np.ndarray
    frame_count: int
    label: str = "run"

    def as_dict(self) -> dict:
        return {
            "label": self.label,
            "frames": self.frame_count,
            "mean_error_mm": self.mean_error,
            "per_joint_mm": {Joint(j).name.lower(): float(e) for j, e in zip(self.joints, self.per_joint)},
        }


def joint_subset(name: str) -> tuple:
    if name not in JOINT_SUBSETS:
        raise InvalidParameterError(f"subconjunto de articulaciones desconocido '{name}' ({', '.join(JOINT_SUBSETS)})")
    return JOINT_SUBSETS[name]


def success_curve(frame_errors, thresholds=THRESHOLDS) -> np.ndarray:
    """Fracción de frames con error estrictamente menor que cada umbral."""
    errors = np.sort(np.asarray(frame_errors, dtype=np.float64))
    counts = np.searchsorted(errors, np.asarray(thresholds, dtype=np.float64), side="left")
    return counts / max(len(errors), 1)


def evaluate(predictions, ground_truth, joints=JOINT_SUBSETS["all"], thresholds=THRESHOLDS,
             label: str = "run") -> EvalReport:
    """Errores euclídeos por articulación (mm); medias con ``math.fsum`` para ser independientes del orden."""
    pred = np.asarray(predictions, dtype=np.float64)
    truth = np.asarray(ground_truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 3 or pred.shape[1:] != (20, 3):
        raise ShapeMismatchError(f"predicciones {pred.shape} y ground truth {truth.shape} deben ser (N, 20, 3)")
    if pred.shape[0] == 0:
        raise ShapeMismatchError("no hay frames que evaluar")
    idx = [int(j) for j in joints]
    errors = np.linalg.norm(pred[:, idx] - truth[:, idx], axis=2)
    n = errors.shape[0]
    per_joint = np.array([math.fsum(errors[:, k]) / n for k in range(len(idx))])
    mean_error = math.fsum(errors.ravel()) / errors.size
    frame_mean = np.array([math.fsum(row) / len(idx) for row in errors])
    report = EvalReport(
        mean_error=mean_error,
        per_joint=per_joint,
        joints=tuple(idx),
        thresholds=np.asarray(thresholds, dtype=np.float64),
        success_max=success_curve(errors.max(axis=1), thresholds),
        success_mean=success_curve(frame_mean, thresholds),
        frame_count=n,
        label=label,
    )
    logger.info(f"[EVAL] {label}: {n} frames, error medio {mean_error:.2f} mm")
    return report


def replace_palm_with_viewpoint(predictions, quaternions, reference_palm=REFERENCE_PALM) -> np.ndarray:
    """Sustituye las 5 articulaciones de palma por la palma de referencia rotada y anclada en la muñeca predicha."""
    pred = np.asarray(predictions, dtype=np.float64)
    quats = np.asarray(quaternions, dtype=np.float64)
    if pred.ndim != 3 or pred.shape[1:] != (20, 3) or quats.shape != (pred.shape[0], 4):
        raise ShapeMismatchError(f"predicciones {pred.shape} y cuaterniones {quats.shape} incompatibles")
    out = pred.copy()
    palm = list(PALM_JOINTS)
    for i in range(pred.shape[0]):
        out[i, palm] = palm_from_viewpoint(quats[i], reference_palm, wrist=pred[i, Joint.WRIST])
    return out


def report_rows(report: EvalReport) -> list:
    rows = [[JOINT_ERROR, Joint(j).name.lower(), "", f"{e:.6f}"] for j, e in zip(report.joints, report.per_joint)]
    for metric, curve in ((SUCCESS_MAX, report.success_max), (SUCCESS_MEAN, report.success_mean)):
        rows.extend([metric, "", f"{t:g}", f"{v:.6f}"] for t, v in zip(report.thresholds, curve))
    return rows


def write_report_csv(report: EvalReport, path: str) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            writer.writerows(report_rows(report))
    except OSError as e:
        raise OutputDirectoryError(f"no se puede escribir {path}: {e}") from e


def read_curves(path: str) -> dict:
    """Curvas de un ``report.csv`` (o de un directorio que lo contenga): métrica -> (umbrales, valores)."""
    if os.path.isdir(path):
        path = os.path.join(path, REPORT_CSV)
    curves = {SUCCESS_MAX: ([], []), SUCCESS_MEAN: ([], [])}
    try:
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CSV_COLUMNS:
                raise DatasetFormatError(f"{path}: columnas {reader.fieldnames}, se esperaban {CSV_COLUMNS}")
            for row in reader:
                if row["metric"] in curves:
                    curves[row["metric"]][0].append(float(row["threshold_mm"]))
                    curves[row["metric"]][1].append(float(row["value"]))
    except OSError as e:
        raise DatasetFormatError(f"no se puede leer el informe {path}: {e}") from e
    except (ValueError, KeyError) as e:
        raise DatasetFormatError(f"{path}: fila inválida: {e}") from e
    return {k: (np.array(t), np.array(v)) for k, (t, v) in curves.items()}


def plot_curves(series: dict, path: str) -> None:
    """SVG con una serie por ejecución y ambos criterios; bytes deterministas."""
    plt.rcParams["svg.hashsalt"] = "hand_pose_tree"
    plt.rcParams["svg.fonttype"] = "none"
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, metric, title in ((axes[0], SUCCESS_MAX, "error máximo"), (axes[1], SUCCESS_MEAN, "error medio")):
        for label, curves in series.items():
            thresholds, values = curves[metric]
            ax.plot(thresholds, values, label=label)
        ax.set_title(f"Tasa de acierto ({title})")
        ax.set_xlabel("umbral de distancia (mm)")
        ax.set_ylabel("fracción de frames")
        ax.set_ylim(0.0, 1.0)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="lower right")
    fig.tight_layout()
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise OutputDirectoryError(f"no se puede escribir {path}: {e}") from e
    finally:
        plt.close(fig)


def report_curves(report: EvalReport) -> dict:
    return {SUCCESS_MAX: (report.thresholds, report.success_max), SUCCESS_MEAN: (report.thresholds, report.success_mean)}


def emit_report(report: EvalReport, out_dir: str) -> dict:
    """Escribe ``report.csv`` y ``curves.svg`` en un directorio nuevo o vacío."""
    prepare_output_dir(out_dir)
    csv_path = os.path.join(out_dir, REPORT_CSV)
    svg_path = os.path.join(out_dir, CURVES_SVG)
    write_report_csv(report, csv_path)
    plot_curves({report.label: report_curves(report)}, svg_path)
    logger.info(f"[EVAL] 📝 informe escrito en {out_dir}")
    return {"csv": csv_path, "svg": svg_path}
