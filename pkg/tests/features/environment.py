# tests/features/environment.py

import os
import platform
import shutil
import sys
import tempfile

import numpy as np
from click.testing import CliRunner

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from hand_pose_tree.log_config import reset_logging  # noqa: E402


def before_all(context):
    """
    Se ejecuta antes de cualquier escenario:
    - Prepara el CliRunner con el que se invoca la CLI.
    - Genera environment.properties para Allure.
    """
    context.runner = CliRunner()
    context.original_cwd = os.getcwd()

    results_dir = os.path.join(ROOT, "reports", "behave_results")
    os.makedirs(results_dir, exist_ok=True)
    props = {
        "PYTHON": platform.python_version(),
        "NUMPY": np.__version__,
        "CLI": "hand_pose_tree",
    }
    with open(os.path.join(results_dir, "environment.properties"), "w") as f:
        f.write("\n".join(f"{k}={v}" for k, v in props.items()))


def before_scenario(context, scenario):
    """Cada escenario trabaja en un directorio temporal propio; las rutas de los pasos son relativas a él."""
    context.workspace = tempfile.mkdtemp(prefix="hand_pose_bdd_")
    os.chdir(context.workspace)
    context.result = None


def after_scenario(context, scenario):
    os.chdir(context.original_cwd)
    reset_logging()
    shutil.rmtree(context.workspace, ignore_errors=True)
