"""Checkpoint directories: a key=value manifest plus one raw float64 file per parameter.

Layout:
    <dir>/manifest.txt        kind, seed, step, and every config field
    <dir>/<param name>.bin    flat little-endian float64 array

The round trip is bit-exact. Trainer state (optimizer moments, projections)
reuses the same raw-array helpers in a sibling directory.
"""

from __future__ import annotations

import os
from dataclasses import fields
from typing import Dict, Tuple

import numpy as np

from .errors import DataError
from .model import ModelConfig, StudentModel
from .teacher import TeacherConfig, TeacherModel

MANIFEST = "manifest.txt"


def write_manifest(path: str, entries: Dict[str, object]):
    lines = [f"{k}={v}" for k, v in entries.items()]
    with open(os.path.join(path, MANIFEST), "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_manifest(path: str) -> Dict[str, str]:
    out = {}
    fname = os.path.join(path, MANIFEST)
    if not os.path.exists(fname):
        raise DataError(f"no manifest at {fname}")
    with open(fname) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"malformed manifest line in {fname}: {line!r}")
            k, v = line.split("=", 1)
            out[k] = v
    return out


def save_arrays(path: str, arrays: Dict[str, np.ndarray]):
    os.makedirs(path, exist_ok=True)
    for name, arr in arrays.items():
        with open(os.path.join(path, name + ".bin"), "wb") as fh:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_array(path: str, name: str, shape) -> np.ndarray:
    fname = os.path.join(path, name + ".bin")
    with open(fname, "rb") as fh:
        arr = np.frombuffer(fh.read(), dtype="<f8").copy()
    expected = int(np.prod(shape))
    if arr.size != expected:
        raise DataError(f"{fname}: has {arr.size} values, expected {expected} for shape {shape}")
    return arr.reshape(shape)


def save_model(path: str, model, step: int = 0):
    os.makedirs(path, exist_ok=True)
    entries: Dict[str, object] = {"kind": model.kind, "seed": model.seed, "step": step}
    if isinstance(model, StudentModel) and not model.compressed:
        entries["kind"] = "control"
    for f in fields(model.config):
        entries[f.name] = getattr(model.config, f.name)
    write_manifest(path, entries)
    save_arrays(path, {name: p.data for name, p in model.params.items()})


def load_model(path: str) -> Tuple[object, int]:
    """Rebuild the model a checkpoint directory describes; returns (model, step)."""
    man = read_manifest(path)
    kind = man.pop("kind", None)
    if kind not in ("student", "control", "teacher"):
        raise DataError(f"unknown checkpoint kind {kind!r} in {path}")
    seed = int(man.pop("seed"))
    step = int(man.pop("step"))
    if kind == "teacher":
        cfg = TeacherConfig(**{f.name: int(man[f.name]) for f in fields(TeacherConfig)})
        model = TeacherModel(cfg, seed)
    else:
        cfg = ModelConfig(**{f.name: int(man[f.name]) for f in fields(ModelConfig)})
        model = StudentModel(cfg, seed, compressed=(kind == "student"))
    for name, p in model.params.items():
        p.data = load_array(path, name, p.data.shape)
    return model, step
