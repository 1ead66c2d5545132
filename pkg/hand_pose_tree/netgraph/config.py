# hand_pose_tree/netgraph/config.py

from __future__ import annotations

import json
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from hand_pose_tree.errors import ConfigError
from hand_pose_tree.losses import LossConfig
from hand_pose_tree.netgraph.main import ARCH_SINGLE, ARCH_TREE
from hand_pose_tree.netgraph.trainer import TrainerConfig

RUN_CONFIG_VERSION = 1

ABLATION_METHODS = {
    1: "canal único con la misma capacidad convolucional, sin L_loc",
    2: "árbol sin restricciones (λ_app = λ_dyn = 0), sin punto de vista",
    3: "árbol con restricciones, sin L_glo en las primeras épocas",
    4: "3 + regresión de punto de vista y fusión de sus rasgos",
    5: "4 + aumento no rígido A",
    6: "4 + aumento no rígido B",
    7: "6 + sustitución de la palma por la del punto de vista",
}


class RunConfig(BaseModel):
    model_config = ConfigDict(
        extra="forbid",
        frozen=True,
        json_schema_extra={
            "example": {
                "version": 1,
                "arch": "tree",
                "preset": "desk",
                "input_size": 96,
                "trainer": {"batch_size": 50, "learning_rate": 0.001, "epochs": 8},
                "loss": {"lambda_local": 4.0, "lambda_global": 4.0},
                "val_fraction": 0.1,
            }
        },
    )

    version: int = RUN_CONFIG_VERSION
    arch: Literal["tree", "single", "fcbranch"] = ARCH_TREE
    preset: Literal["desk", "full"] = "desk"
    input_size: int = 96
    dropout: float = Field(0.3, ge=0.0, lt=1.0)
    viewpoint_fusion: bool = True
    trainer: TrainerConfig = Field(default_factory=TrainerConfig.desk)
    loss: LossConfig = Field(default_factory=LossConfig)
    val_fraction: float = Field(0.1, ge=0.0, lt=1.0)
    augment_preset: Optional[Literal["A", "B", "standard"]] = None
    augment_multiplier: int = Field(1, gt=0)
    palm_viewpoint: bool = False
    method: Optional[int] = None

    def network_kwargs(self) -> dict:
        kwargs = {"dropout_rate": self.dropout, "seed": self.trainer.seed}
        if self.arch == ARCH_TREE:
            kwargs["viewpoint_fusion"] = self.viewpoint_fusion
        return kwargs

    @classmethod
    def for_method(cls, method: int, **overrides) -> "RunConfig":
        """Configuración de cada peldaño de la escalera de ablación (1-7)."""
        if method not in ABLATION_METHODS:
            raise ConfigError(f"método de ablación desconocido {method} (1-{len(ABLATION_METHODS)})")
        loss = LossConfig()
        trainer = TrainerConfig.desk()
        values: dict = {"method": method, "arch": ARCH_TREE, "loss": loss, "trainer": trainer}
        if method == 1:
            values.update(arch=ARCH_SINGLE, loss=loss.unconstrained())
        elif method == 2:
            values.update(loss=loss.unconstrained().model_copy(update={"viewpoint_weight": 0.0}),
                          viewpoint_fusion=False)
        elif method == 3:
            values.update(loss=loss.model_copy(update={"viewpoint_weight": 0.0}), viewpoint_fusion=False,
                          trainer=trainer.model_copy(update={"global_warmup_epochs": 2}))
        else:
            values.update(trainer=trainer.model_copy(update={"global_warmup_epochs": 2}))
        if method == 5:
            values.update(augment_preset="A", augment_multiplier=4)
        if method in (6, 7):
            values.update(augment_preset="B", augment_multiplier=4)
        if method == 7:
            values.update(palm_viewpoint=True)
        return cls(**{**values, **overrides})


def parse_run_config(text: str, source: str = "<config>") -> RunConfig:
    try:
        raw = json.loads(text)
    except ValueError as e:
        raise ConfigError(f"{source}: JSON inválido: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{source}: se esperaba un objeto JSON")
    if raw.get("version") != RUN_CONFIG_VERSION:
        raise ConfigError(f"{source}: versión de configuración {raw.get('version')!r} no soportada "
                          f"(se espera {RUN_CONFIG_VERSION})")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"{source}: {where}: {first['msg']}") from e


def load_run_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"no se puede leer la configuración {path}: {e}") from e
    return parse_run_config(text, path)
