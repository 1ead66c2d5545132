# hand_pose_tree/log_config.py

from __future__ import annotations

from loguru import logger
import os
import sys
from datetime import datetime

_LOG_FILE_PATH = None
_HANDLER_IDS: list[int] = []
_DEFAULT_HANDLER = 0


def configure_logging(level: str = "INFO", log_dir: str | None = None, prefix: str = "hand_pose_tree") -> str | None:
    """
    Configura los sinks de loguru para la CLI.

    La librería nunca añade sinks al importarse: solo quien ejecuta llama a esta
    función. Sustituye los sinks que ella misma añadió y el de por defecto; los
    que haya instalado otro (p. ej. los tests) se conservan. Devuelve la ruta del
    fichero de log si se pidió uno.
    """
    global _LOG_FILE_PATH

    for handler_id in _HANDLER_IDS + [_DEFAULT_HANDLER]:
        try:
            logger.remove(handler_id)
        except ValueError:
            pass  # ya eliminado
    _HANDLER_IDS.clear()

    # ➕ Salida a consola (colorida)
    _HANDLER_IDS.append(logger.add(
        sys.stderr,
        level=level,
        format="<green>[{time:HH:mm:ss}]</green> <level>[{level}]</level> <cyan>{message}</cyan>"
    ))

    _LOG_FILE_PATH = None
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        # 🕒 Timestamp único por ejecución
        timestamp = datetime.now().strftime("%Y-%m-%d_%H-%M-%S")
        _LOG_FILE_PATH = os.path.join(log_dir, f"{prefix}_{timestamp}.log")

        # 🧾 Salida a fichero (detallada, incluye DEBUG y trazas)
        _HANDLER_IDS.append(logger.add(
            _LOG_FILE_PATH,
            level="DEBUG",
            rotation="1 day",
            retention="7 days",
            compression="zip",
            format="[{time:YYYY-MM-DD HH:mm:ss}] [{level}] {message}",
            backtrace=True,
            diagnose=True
        ))

    return _LOG_FILE_PATH


def reset_logging() -> None:
    """Quita los sinks añadidos por ``configure_logging`` (p. ej. tras una invocación con CliRunner)."""
    global _LOG_FILE_PATH
    for handler_id in _HANDLER_IDS:
        try:
            logger.remove(handler_id)
        except ValueError:
            pass
    _HANDLER_IDS.clear()
    _LOG_FILE_PATH = None


def get_log_file() -> str | None:
    return _LOG_FILE_PATH
