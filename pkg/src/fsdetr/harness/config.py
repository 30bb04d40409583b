"""Run configuration and its flat ``key=value`` text format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Union

from ..losses import LossWeights


@dataclass(frozen=True)
class RunConfig:
    # block toggles (defaults = every component on)
    shab: bool = True
    da_aifi: bool = True
    fsfpn_cfsb: bool = True
    shab_stages: str = "P4,P5"
    bu_cfsb: bool = False
    cfsb_act: bool = False
    block_act: bool = True

    # widths
    widths: str = "8,16,32,48,96"  # stem, P2, P3, P4, P5
    hidden: int = 16
    heads: int = 8
    points: int = 4
    repc3_depth: int = 3
    aifi_layers: int = 1
    num_classes: int = 1
    sni_variant: str = "linear"

    # loss
    lambda_cls: float = 2.0
    lambda_l1: float = 5.0
    lambda_iou: float = 2.0
    focaler_d: float = 0.0
    focaler_u: float = 0.95
    vfl_alpha: float = 0.75
    vfl_gamma: float = 2.0
    match_iou: float = 0.1

    # data / optimisation
    seed: int = 0
    canvas: int = 64
    n_scenes: int = 8
    n_objects: int = 4
    size_min: int = 4
    size_max: int = 10
    steps: int = 300
    batch: int = 8
    lr: float = 2e-3
    weight_decay: float = 1e-4
    smooth: int = 20

    # evaluation
    eval_scenes: int = 16
    eval_iou: float = 0.5
    score_threshold: float = 0.05

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_cls, self.lambda_l1, self.lambda_iou)

    @property
    def width_list(self) -> list[int]:
        return [int(v) for v in self.widths.split(",")]

    @property
    def shab_levels(self) -> list[str]:
        return [s.strip() for s in self.shab_stages.split(",") if s.strip()]

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def validate(self) -> "RunConfig":
        ws = self.width_list
        if len(ws) != 5 or min(ws) <= 0:
            raise ValueError(f"widths needs 5 positive entries (stem,P2..P5), got {self.widths!r}")
        if self.canvas % 32:
            raise ValueError(f"canvas must be a multiple of 32, got {self.canvas}")
        if self.hidden % self.heads or self.hidden % 4:
            raise ValueError(f"hidden width {self.hidden} must divide by heads={self.heads} and by 4")
        if any(w % 2 for w in ws[1:]):
            raise ValueError("pyramid widths must be even (SHSA splits channels in half)")
        if not 0.0 <= self.focaler_d < self.focaler_u <= 1.0:
            raise ValueError("focaler interval needs 0 <= d < u <= 1")
        if self.steps < 1 or self.batch < 1:
            raise ValueError("steps and batch must be >= 1")
        if self.sni_variant not in ("linear", "area", "none"):
            raise ValueError(f"unknown sni_variant {self.sni_variant!r}")
        bad = [s for s in self.shab_levels if s not in ("P2", "P3", "P4", "P5")]
        if bad:
            raise ValueError(f"unknown SHAB stages {bad}")
        return self

    # ------------------------------------------------------------------ io

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name}={str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"


def _coerce(name: str, kind, raw: str):
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    return raw


def parse_config(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    """Parse ``key=value`` lines; ``#`` starts a comment; unknown keys are errors."""
    known = {f.name: f.type for f in fields(RunConfig)}
    changes = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        changes[key] = _coerce(key, known[key], raw)
    return (base or RunConfig()).replace(**changes).validate()


def load_config(path: Union[str, Path, None]) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    return parse_config(Path(path).read_text())
