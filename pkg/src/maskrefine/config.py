"""Plain-text ``key = value`` run configuration."""
from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .fusion import TtaTransform
from .losses import CompositeLossWeights, FocalLossParams
from .pointhead import SubdivisionConfig


class ConfigError(ValueError):
    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = str(path)
        self.line = line


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _transforms(text: str) -> tuple[TtaTransform, ...]:
    return tuple(TtaTransform.parse(v) for v in text.split(",") if v.strip())


@dataclass(frozen=True)
class RunConfig:
    focal_alpha: tuple[float, ...] = (1.0,)
    focal_gamma: float = 2.0
    w_cls: float = 1.0
    w_box: float = 1.0
    w_mask: float = 1.1
    w_point: float = 1.0
    coarse_size: int = 7
    steps: int = 2
    points_per_step: int = 196
    threshold: float = 0.5
    tta: tuple[TtaTransform, ...] = (TtaTransform("identity"), TtaTransform("horizontal_flip"))
    ensemble_iou: float = 0.5
    max_dets: int = 100
    speckle_fraction: float = 0.05
    hole_fraction: float = 0.05
    anchor_coverage: float = 0.9
    hidden_widths: tuple[int, ...] = (64, 64, 64)
    lr: float = 0.05
    epochs: int = 30
    points_per_example: int = 98
    batch_size: int = 256
    train_instances: int = 200
    test_instances: int = 60
    seed: int = 0
    threads: int = 1

    @property
    def focal(self) -> FocalLossParams:
        return FocalLossParams(self.focal_alpha, self.focal_gamma)

    @property
    def weights(self) -> CompositeLossWeights:
        return CompositeLossWeights(self.w_cls, self.w_box, self.w_mask, self.w_point)

    @property
    def subdivision(self) -> SubdivisionConfig:
        return SubdivisionConfig(self.coarse_size, self.steps, self.points_per_step, self.threshold)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_PARSERS = {
    "focal_alpha": _floats,
    "hidden_widths": _ints,
    "tta": _transforms,
}


def parse_config(text: str, path="<config>") -> RunConfig:
    kinds = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(path, lineno, f"expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in kinds:
            raise ConfigError(path, lineno, f"unknown key {key!r}")
        if key in values:
            raise ConfigError(path, lineno, f"duplicate key {key!r}")
        parse = _PARSERS.get(key) or (int if kinds[key] == "int" else float)
        try:
            values[key] = parse(value)
        except ValueError as exc:
            raise ConfigError(path, lineno, f"bad value for {key}: {exc}") from exc
    try:
        cfg = RunConfig(**values)
        cfg.focal, cfg.weights, cfg.subdivision
    except ValueError as exc:
        raise ConfigError(path, None, str(exc)) from exc
    if cfg.threads < 1 or cfg.max_dets < 1:
        raise ConfigError(path, None, "threads and max_dets must be positive")
    return cfg


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(path, None, f"cannot read file ({exc.strerror})") from exc
    return parse_config(text, path)
