#!/usr/bin/env python3
"""
Checkpoint I/O
JSON manifest plus flat little-endian float64 files for parameters and Adam moments.

    <dir>/checkpoint.json   format_version, dtype, parameters [{name, shape}], step, epoch,
                            seed, model/train config, metric history
    <dir>/params.bin        all parameter values concatenated in manifest order
    <dir>/adam_m.bin        first moments (same layout)
    <dir>/adam_v.bin        second moments (same layout)
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from errors import CheckpointMismatch, ManifestMismatch, ShortFile
from nn import ParamStore

FORMAT_VERSION = 1
DTYPE_TAG = "float64-le"
MANIFEST_NAME = "checkpoint.json"
PARAMS_FILE = "params.bin"
ADAM_M_FILE = "adam_m.bin"
ADAM_V_FILE = "adam_v.bin"


@dataclass
class Checkpoint:
    """A loaded checkpoint: manifest fields plus named arrays"""
    manifest: Dict[str, Any]
    values: Dict[str, np.ndarray]
    adam_m: Optional[Dict[str, np.ndarray]] = None
    adam_v: Optional[Dict[str, np.ndarray]] = None
    history: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def step(self) -> int:
        return int(self.manifest.get("step", 0))

    @property
    def epoch(self) -> int:
        return int(self.manifest.get("epoch", 0))


def _write_flat(path: Path, arrays: List[np.ndarray]):
    flat = np.concatenate([a.reshape(-1) for a in arrays]) if arrays else np.zeros(0)
    flat.astype('<f8').tofile(path)


def _read_flat(path: Path, count: int) -> np.ndarray:
    data = np.fromfile(path, dtype='<f8')
    if data.size < count:
        raise ShortFile(f"{path.name}: expected {count} values, found {data.size}")
    if data.size > count:
        raise ManifestMismatch(f"{path.name}: holds {data.size} values, manifest declares {count}")
    return data.astype(np.float64)


def _split(flat: np.ndarray, entries: List[Dict[str, Any]]) -> Dict[str, np.ndarray]:
    out = {}
    offset = 0
    for entry in entries:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape, dtype=np.int64))
        out[entry["name"]] = flat[offset:offset + size].reshape(shape).copy()
        offset += size
    return out


def save_checkpoint(directory, store: ParamStore, step: int, metadata: Optional[Dict[str, Any]] = None,
                    include_optimizer: bool = True) -> Path:
    """Write the store (and its Adam moments) to directory; returns the manifest path"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = store.names()

    manifest: Dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "dtype": DTYPE_TAG,
        "parameters": [{"name": n, "shape": list(store.value(n).shape)} for n in names],
        "step": int(step),
        "has_optimizer_state": include_optimizer,
    }
    manifest.update(metadata or {})

    _write_flat(directory / PARAMS_FILE, [store.value(n) for n in names])
    if include_optimizer:
        m_buf, v_buf = store.moments()
        _write_flat(directory / ADAM_M_FILE, [m_buf[n] for n in names])
        _write_flat(directory / ADAM_V_FILE, [v_buf[n] for n in names])

    manifest_path = directory / MANIFEST_NAME
    with open(manifest_path, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2)
        f.write("\n")
    return manifest_path


def load_checkpoint(directory) -> Checkpoint:
    """Read a checkpoint directory written by save_checkpoint"""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} in {directory}")
    with open(manifest_path, 'r', encoding='utf-8') as f:
        manifest = json.load(f)

    if manifest.get("format_version") != FORMAT_VERSION:
        raise ManifestMismatch(f"unsupported checkpoint format_version {manifest.get('format_version')}")
    if manifest.get("dtype") != DTYPE_TAG:
        raise ManifestMismatch(f"unsupported checkpoint dtype {manifest.get('dtype')}")

    entries = manifest["parameters"]
    count = int(sum(np.prod(e["shape"], dtype=np.int64) for e in entries))
    values = _split(_read_flat(directory / PARAMS_FILE, count), entries)

    adam_m = adam_v = None
    if manifest.get("has_optimizer_state"):
        adam_m = _split(_read_flat(directory / ADAM_M_FILE, count), entries)
        adam_v = _split(_read_flat(directory / ADAM_V_FILE, count), entries)

    return Checkpoint(manifest, values, adam_m, adam_v, list(manifest.get("history", [])))


def restore_into(checkpoint: Checkpoint, store: ParamStore, with_optimizer: bool = True):
    """
    Copy checkpoint arrays into a freshly built store.

    Raises:
        CheckpointMismatch: parameter names or shapes differ from the model's
    """
    expected = store.shapes()
    found = {n: v.shape for n, v in checkpoint.values.items()}
    if list(expected) != list(found):
        missing = sorted(set(expected) - set(found))
        extra = sorted(set(found) - set(expected))
        raise CheckpointMismatch(f"parameter sets differ (missing {missing[:5]}, unexpected {extra[:5]})")
    for name, shape in expected.items():
        if found[name] != shape:
            raise CheckpointMismatch(f"{name}: checkpoint shape {found[name]} != model shape {shape}")

    for name, value in checkpoint.values.items():
        store.set_value(name, value)
    if with_optimizer and checkpoint.adam_m is not None:
        m_buf, v_buf = store.moments()
        for name in expected:
            m_buf[name][...] = checkpoint.adam_m[name]
            v_buf[name][...] = checkpoint.adam_v[name]
