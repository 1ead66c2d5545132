# hand_pose_tree/eval_cli/main.py

"""
CLI del pipeline: gen → dedupe → augment → train → eval, más gradcheck y plot.

Códigos de salida: 0 éxito, 1 uso incorrecto, 2 error de datos, 3 fallo numérico.
"""

from __future__ import annotations

import json
import os
import sys

import click
import numpy as np
from loguru import logger

from hand_pose_tree.augment import AugmentConfig, dedupe_samples, generate_set
from hand_pose_tree.errors import GradientCheckError, HandPoseError
from hand_pose_tree.eval_cli.metrics import (
    emit_report,
    evaluate,
    joint_subset,
    plot_curves,
    read_curves,
    replace_palm_with_viewpoint,
)
from hand_pose_tree.hand_model import PALM_JOINTS
from hand_pose_tree.log_config import configure_logging
from hand_pose_tree.losses import gradcheck as loss_gradcheck
from hand_pose_tree.netgraph import (
    ARCHITECTURES,
    RunConfig,
    build_network,
    load_checkpoint,
    load_run_config,
    predict,
    prepare_examples,
    split_items,
    train,
)
from hand_pose_tree.netgraph import gradcheck as net_gradcheck
from hand_pose_tree.synth_render import generate_dataset, prepare_output_dir, read_dataset, write_dataset

USAGE_ERROR = 1


class PipelineGroup(click.Group):
    """Grupo que traduce las excepciones a los códigos de salida del pipeline."""

    def main(self, args=None, prog_name=None, complete_var=None, standalone_mode=True, **extra):
        try:
            result = super().main(args, prog_name, complete_var, standalone_mode=False, **extra)
            code = result if isinstance(result, int) else 0
        except click.ClickException as e:
            e.show()
            code = USAGE_ERROR
        except click.Abort:
            click.echo("Abortado", err=True)
            code = USAGE_ERROR
        except HandPoseError as e:
            logger.error(f"[CLI] ❌ {type(e).__name__}: {e}")
            click.echo(f"error: {e}", err=True)
            code = e.exit_code
        if standalone_mode:
            sys.exit(code)
        return code


@click.group(cls=PipelineGroup)
@click.option("--verbose", is_flag=True, help="Log de consola en nivel DEBUG.")
@click.option("--log-dir", type=click.Path(file_okay=False), default=None, help="Directorio del fichero de log.")
def cli(verbose, log_dir):
    """Estimación de pose de mano con red en árbol y pérdidas restringidas."""
    configure_logging("DEBUG" if verbose else "INFO", log_dir)


@cli.command()
@click.option("--count", type=click.IntRange(min=1), required=True, help="Número de muestras.")
@click.option("--seed", type=int, default=0, show_default=True, help="Semilla.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directorio de salida (vacío).")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Procesos de render.")
def gen(count, seed, out_dir, workers):
    """Genera un dataset sintético de profundidad."""
    stems = generate_dataset(out_dir, count, seed, workers=workers)
    click.echo(f"{len(stems)} muestras en {out_dir}")


@cli.command()
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False), required=True, help="Dataset de entrada.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directorio de salida (vacío).")
@click.option("--threshold", type=click.FloatRange(min=0.0, min_open=True), default=10.0, show_default=True,
              help="Ψ mínimo en mm entre frames conservados.")
def dedupe(in_dir, out_dir, threshold):
    """Elimina frames redundantes (Ψ < umbral)."""
    samples = read_dataset(in_dir)
    kept = dedupe_samples(samples, threshold)
    write_dataset(out_dir, kept)
    click.echo(f"{len(kept)}/{len(samples)} muestras conservadas")


@cli.command()
@click.option("--in", "in_dir", type=click.Path(exists=True, file_okay=False), required=True, help="Dataset de entrada.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directorio de salida (vacío).")
@click.option("--preset", type=click.Choice(["A", "B", "standard"]), default="A", show_default=True,
              help="Preset de aumento.")
@click.option("--multiplier", type=click.IntRange(min=1), default=4, show_default=True,
              help="Variantes por muestra de origen.")
@click.option("--seed", type=int, default=0, show_default=True, help="Semilla.")
@click.option("--workers", type=click.IntRange(min=1), default=1, show_default=True, help="Procesos.")
@click.option("--keep-source/--no-keep-source", default=True, show_default=True,
              help="Incluir las muestras originales en la salida.")
def augment(in_dir, out_dir, preset, multiplier, seed, workers, keep_source):
    """Aumento no rígido (TPS) o estándar de un dataset."""
    prepare_output_dir(out_dir)
    samples = read_dataset(in_dir)
    augmented = generate_set(samples, AugmentConfig.preset(preset, seed=seed), multiplier, workers)
    combined = (samples if keep_source else []) + augmented
    for i, sample in enumerate(combined):
        sample.sample_id = i
    write_dataset(out_dir, combined)
    click.echo(f"{len(combined)} muestras en {out_dir} ({len(augmented)} aumentadas)")


def run_training(run: RunConfig, samples: list, out_dir: str | None = None, metadata: dict | None = None):
    """
    Partición, aumento opcional, preparación de ejemplos y entrenamiento de ``run``
    sobre ``samples``. Devuelve (red tras la última época, TrainingLog).
    """
    train_samples, val_samples = split_items(samples, run.val_fraction, run.trainer.seed)
    if run.augment_preset:
        config = AugmentConfig.preset(run.augment_preset, seed=run.trainer.seed)
        train_samples = train_samples + generate_set(train_samples, config, run.augment_multiplier)

    train_examples = prepare_examples(train_samples, run.input_size)
    val_examples = prepare_examples(val_samples, run.input_size)
    graph = build_network(run.arch, run.input_size, run.preset, **run.network_kwargs())
    log = train(graph, train_examples, val_examples, run.trainer, run.loss, out_dir, metadata=metadata)
    return graph, log


def predict_samples(graph, samples: list):
    """Predicciones en mm de cámara, cuaterniones y las muestras efectivamente evaluadas."""
    examples = prepare_examples(samples, graph.description["input_size"])
    by_id = {s.sample_id: s for s in samples}
    used = [by_id[e.sample_id] for e in examples]
    poses, quats = predict(graph, examples)
    centers = np.stack([s.center_world for s in used])
    return poses + centers[:, None, :], quats, used


@cli.command(name="train")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True, help="Dataset de entrenamiento.")
@click.option("--arch", type=click.Choice(list(ARCHITECTURES)), default=None,
              help="Arquitectura (por defecto la del fichero de configuración).")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Configuración JSON (RunConfig, versión 1).")
@click.option("--method", type=click.IntRange(1, 7), default=None, help="Peldaño de ablación 1-7 en lugar de --config.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directorio de salida (vacío).")
def train_command(data, arch, config_path, method, out_dir):
    """Entrena una red y guarda log CSV y mejor checkpoint."""
    if config_path and method:
        raise click.UsageError("--config y --method son excluyentes")
    run = load_run_config(config_path) if config_path else (RunConfig.for_method(method) if method else RunConfig())
    if arch:
        run = run.model_copy(update={"arch": arch})
    prepare_output_dir(out_dir)
    with open(os.path.join(out_dir, "run_config.json"), "w", encoding="utf-8") as f:
        f.write(run.model_dump_json(indent=2))
        f.write("\n")

    _, log = run_training(run, read_dataset(data), out_dir,
                          metadata={"palm_viewpoint": run.palm_viewpoint, "method": run.method})
    click.echo(f"mejor época {log.best_epoch}: {log.best_error:.2f} mm ({log.checkpoint})")


@cli.command(name="eval")
@click.option("--model", "model_path", type=click.Path(exists=True, dir_okay=False), required=True, help="Checkpoint.")
@click.option("--data", type=click.Path(exists=True, file_okay=False), required=True, help="Dataset de test.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Directorio de salida (vacío).")
@click.option("--palm-viewpoint/--no-palm-viewpoint", default=None,
              help="Sustituir la palma por la del punto de vista (por defecto, lo guardado en el checkpoint).")
@click.option("--viewpoint-source", type=click.Choice(["model", "ground-truth"]), default="model", show_default=True,
              help="Origen del cuaternión para la sustitución de palma.")
@click.option("--joints", "subset", type=click.Choice(["all", "palm", "fingertips"]), default="all",
              show_default=True, help="Subconjunto de articulaciones evaluado.")
@click.option("--label", default=None, help="Etiqueta de la serie en las curvas.")
def eval_command(model_path, data, out_dir, palm_viewpoint, viewpoint_source, subset, label):
    """Evalúa un checkpoint y emite report.csv y curves.svg."""
    graph, metadata = load_checkpoint(model_path)
    predictions, quats, used = predict_samples(graph, read_dataset(data))
    truth = np.stack([s.joints.joints for s in used])

    if palm_viewpoint is None:
        palm_viewpoint = bool(metadata.get("palm_viewpoint", False))
    if palm_viewpoint:
        if viewpoint_source == "ground-truth":
            quats = np.stack([s.quaternion.as_array() for s in used])
        replaced = replace_palm_with_viewpoint(predictions, quats)
        palm = list(PALM_JOINTS)
        before = evaluate(predictions, truth, palm, label="palma sin sustituir").mean_error
        after = evaluate(replaced, truth, palm, label="palma sustituida").mean_error
        logger.info(f"[EVAL] palma: {before:.2f} mm → {after:.2f} mm (cuaternión: {viewpoint_source})")
        predictions = replaced

    report = evaluate(predictions, truth, joint_subset(subset), label=label or os.path.basename(out_dir.rstrip("/")))
    emit_report(report, out_dir)
    with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(report.as_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    click.echo(f"error medio {report.mean_error:.2f} mm sobre {report.frame_count} frames")


@cli.command()
@click.option("--module", "module", type=click.Choice(["losses", "netgraph", "all"]), default="all",
              show_default=True, help="Batería a ejecutar.")
@click.option("--seed", type=int, default=0, show_default=True, help="Semilla.")
@click.option("--configurations", type=click.IntRange(min=1), default=100, show_default=True,
              help="Configuraciones aleatorias por batería.")
@click.option("--eps", type=click.FloatRange(1e-6, 1e-2), default=1e-6, show_default=True, help="Paso ε.")
def gradcheck(module, seed, configurations, eps):
    """Comprueba gradientes analíticos contra diferencias centrales."""
    results = {}
    if module in ("losses", "all"):
        results.update({f"losses.{k}": v for k, v in loss_gradcheck.run_suite(seed, configurations, eps).items()})
    if module in ("netgraph", "all"):
        results.update({f"netgraph.{k}": v for k, v in net_gradcheck.run_suite(seed, configurations, eps).items()})
    for name, r in results.items():
        click.echo(f"{name}\t{r.max_relative_error:.3e}\t{r.checked}\t{r.skipped}")
    failed = [name for name, r in results.items() if not r.passed]
    if failed:
        raise GradientCheckError(f"error relativo > 1e-4 en {', '.join(failed)}")


@cli.command()
@click.option("--reports", required=True, help="Informes separados por comas (report.csv o su directorio).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="SVG de salida.")
def plot(reports, out_path):
    """Superpone las curvas de varios informes."""
    paths = [p for p in reports.split(",") if p]
    if not paths:
        raise click.UsageError("--reports no contiene rutas")
    series = {}
    for path in paths:
        label = os.path.basename(os.path.dirname(path) if path.endswith(".csv") else path.rstrip("/"))
        series[label or path] = read_curves(path)
    plot_curves(series, out_path)
    click.echo(f"curvas escritas en {out_path}")


def main(argv=None):
    return cli.main(args=argv, prog_name="hand_pose_tree")
