"""Run configuration files (JSON) with field-level diagnostics."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .models import ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    """Invalid run configuration; the message names the offending field."""


# expected JSON types for the flat training fields
_TRAIN_TYPES: dict[str, tuple] = {
    "problem": (str,),
    "params": (list,),
    "lambda1": (int, float),
    "lambda2": (int, float),
    "lr": (int, float),
    "steps": (int,),
    "seed": (int,),
    "n_interior": (int,),
    "n_boundary": (int,),
    "share_collocation": (bool,),
    "eval_resolution": (int,),
    "log_every": (int,),
    "early_stop_loss": (int, float),
    "eval_every": (int,),
    "target_test_mse": (int, float, type(None)),
    "chunk_rows": (int,),
}
_RUN_TYPES: dict[str, tuple] = {
    "out_dir": (str,),
    "checkpoint": (str, type(None)),
    "export_resolution": (int,),
    "benchmark": (dict, type(None)),
}
_BENCH_TYPES = {"repetitions": (int,), "models": (list,), "warmup": (int,)}


@dataclass
class BenchmarkConfig:
    models: list[ModelConfig] = field(default_factory=list)
    repetitions: int = 3
    warmup: int = 1

    def to_dict(self) -> dict:
        return {
            "models": [m.to_dict() for m in self.models],
            "repetitions": self.repetitions,
            "warmup": self.warmup,
        }


@dataclass
class RunConfig:
    train: TrainConfig
    out_dir: str = "runs/latest"
    checkpoint: str | None = None
    export_resolution: int = 101
    benchmark: BenchmarkConfig | None = None

    @property
    def checkpoint_path(self) -> Path:
        return Path(self.checkpoint) if self.checkpoint else Path(self.out_dir) / "model.ckpt.json"

    def to_dict(self) -> dict:
        d = self.train.to_dict()
        d.update(
            out_dir=self.out_dir,
            checkpoint=self.checkpoint,
            export_resolution=self.export_resolution,
            benchmark=self.benchmark.to_dict() if self.benchmark else None,
        )
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _is_type(value: Any, types: tuple) -> bool:
    if isinstance(value, bool) and bool not in types:
        return False
    return isinstance(value, types)


def _check(d: dict, table: dict, where: str) -> None:
    for key, value in d.items():
        if key not in table:
            raise ConfigError(f"{where}{key}: unknown field")
        if not _is_type(value, table[key]):
            names = "/".join("null" if t is type(None) else t.__name__ for t in table[key])
            raise ConfigError(f"{where}{key}: expected {names}, got {type(value).__name__}")


def _model(d: Any, where: str) -> ModelConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(d) - {"kind", "nets", "P", "k"}
    if extra:
        raise ConfigError(f"{where}.{sorted(extra)[0]}: unknown field")
    if "kind" not in d or "nets" not in d:
        raise ConfigError(f"{where}: 'kind' and 'nets' are required")
    try:
        return ModelConfig.from_dict(d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def from_dict(d: Any) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("top level: expected a JSON object")
    for req in ("problem", "model"):
        if req not in d:
            raise ConfigError(f"{req}: required field missing")
    d = dict(d)
    model = _model(d.pop("model"), "model")
    run_keys = {k: d.pop(k) for k in list(d) if k in _RUN_TYPES}
    _check(d, _TRAIN_TYPES, "")
    _check(run_keys, _RUN_TYPES, "")
    try:
        train = TrainConfig(model=model, **d)
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    bench = None
    if run_keys.get("benchmark") is not None:
        b = run_keys["benchmark"]
        _check(b, _BENCH_TYPES, "benchmark.")
        models = [_model(m, f"benchmark.models[{i}]") for i, m in enumerate(b.get("models", []))]
        bench = BenchmarkConfig(models, b.get("repetitions", 3), b.get("warmup", 1))
        if bench.repetitions < 1:
            raise ConfigError("benchmark.repetitions: must be >= 1")
    run = RunConfig(
        train=train,
        out_dir=run_keys.get("out_dir", "runs/latest"),
        checkpoint=run_keys.get("checkpoint"),
        export_resolution=run_keys.get("export_resolution", 101),
        benchmark=bench,
    )
    if run.export_resolution < 2:
        raise ConfigError("export_resolution: must be >= 2")
    return run


def loads(text: str) -> RunConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return from_dict(d)


def load(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return loads(text)


def train_field_names() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
