# hand_pose_tree/__init__.py

"""
Paquete raíz para la regresión de pose de mano en imágenes de profundidad con
red en árbol y pérdidas con restricciones.
Aquí se agrupan los distintos módulos:
- hand_model
- depth_geometry
- losses
- netgraph
- augment
- synth_render
- eval_cli
"""

__version__ = "1.0.0"

__all__ = [
    "hand_model",
    "depth_geometry",
    "losses",
    "netgraph",
    "augment",
    "synth_render",
    "eval_cli",
]
