"""Checkpoints, field CSVs and atomic file writes."""

from __future__ import annotations

import base64
import csv
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .models import Model, ModelConfig
from .nn import Mlp

CHECKPOINT_FORMAT = "decgreen-checkpoint/1"
CSV_HEADER = ("x", "y", "u_exact", "u_pred", "abs_error")


class CheckpointError(ValueError):
    pass


def atomic_write_text(path, text: str) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _unpack(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def checkpoint_dumps(model: Model, problem: str, params: Sequence[float]) -> str:
    nets = {
        role: {"spec": list(net.spec), "k": net.k, "seed": net.seed, "params": [_pack(p.value) for p in net.params]}
        for role, net in model.nets.items()
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "model": model.config.to_dict(),
        "seed": model.seed,
        "problem": problem,
        "params": [float(a) for a in params],
        "quadrature": None if model.quadrature is None else _pack(model.quadrature),
        "nets": nets,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def save_checkpoint(path, model: Model, problem: str, params: Sequence[float]) -> None:
    atomic_write_text(path, checkpoint_dumps(model, problem, params))


def checkpoint_loads(text: str) -> tuple[Model, str, list[float]]:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc}") from None
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unsupported checkpoint format {doc.get('format')!r}")
    config = ModelConfig.from_dict(doc["model"])
    quad = None if doc["quadrature"] is None else _unpack(doc["quadrature"])
    nets = {}
    for role, nd in doc["nets"].items():
        net = Mlp(nd["spec"], k=nd["k"], seed=nd["seed"], name=role)
        arrays = [_unpack(p) for p in nd["params"]]
        if len(arrays) != len(net.params):
            raise CheckpointError(f"network {role}: wrong number of parameter arrays")
        for p, arr in zip(net.params, arrays):
            if arr.shape != p.value.shape:
                raise CheckpointError(f"network {role}: parameter shape {arr.shape} != {p.value.shape}")
            p.value = arr
        nets[role] = net
    model = Model(config, doc["seed"], quad, nets)
    return model, doc["problem"], list(doc["params"])


def load_checkpoint(path) -> tuple[Model, str, list[float]]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from None
    return checkpoint_loads(text)


def field_csv_text(points, u_exact, u_pred) -> str:
    """CSV with 17 significant digits so every double round-trips."""
    points = np.asarray(points)
    lines = [",".join(CSV_HEADER)]
    err = np.abs(np.asarray(u_exact) - np.asarray(u_pred))
    for (x, y), ue, up, e in zip(points, u_exact, u_pred, err):
        lines.append(",".join(format(float(v), ".17g") for v in (x, y, ue, up, e)))
    return "\n".join(lines) + "\n"


def write_field_csv(path, points, u_exact, u_pred) -> None:
    atomic_write_text(path, field_csv_text(points, u_exact, u_pred))


def read_field_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {header}")
        rows = np.array([[float(v) for v in row] for row in reader], dtype=np.float64)
    return {name: rows[:, i] for i, name in enumerate(CSV_HEADER)}


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")
