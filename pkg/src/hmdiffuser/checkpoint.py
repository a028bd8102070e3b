"""Checkpoint files: a UTF-8 key/value manifest plus a little-endian f32 blob.

A checkpoint is a directory holding ``manifest.txt`` and ``params.bin``.
Manifest lines are ``key = value``; parameter blocks are recorded as
``param.<name> = shape=<d0>x<d1>... offset=<bytes>`` and metadata as
``meta.<key> = <json>``. Optimizer moments are stored as extra blocks
under ``adam.m.`` / ``adam.v.`` so training can resume exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .nn import ParameterSet

FORMAT = "hmdiffuser-checkpoint/1"


class CheckpointError(ValueError):
    pass


def _blocks(params: ParameterSet, with_optimizer: bool):
    for name, t in params.items():
        yield f"param.{name}", t.data
    if with_optimizer:
        for name in params:
            yield f"adam.m.{name}", params.m[name]
            yield f"adam.v.{name}", params.v[name]


def save_checkpoint(path, params: ParameterSet, meta: dict | None = None,
                    with_optimizer: bool = True) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lines = [f"format = {FORMAT}", f"adam.step = {params.step}"]
    offset = 0
    chunks = []
    for key, arr in _blocks(params, with_optimizer):
        raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        shape = "x".join(str(d) for d in arr.shape) or "scalar"
        lines.append(f"{key} = shape={shape} offset={offset}")
        chunks.append(raw)
        offset += len(raw)
    for k, v in sorted((meta or {}).items()):
        lines.append(f"meta.{k} = {json.dumps(v, sort_keys=True)}")
    (path / "params.bin").write_bytes(b"".join(chunks))
    (path / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> dict[str, str]:
    path = Path(path)
    try:
        text = (path / "manifest.txt").read_text(encoding="utf-8")
    except FileNotFoundError:
        raise CheckpointError(f"no manifest in {path}") from None
    entries = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if " = " not in line:
            raise CheckpointError(f"{path}/manifest.txt:{lineno}: expected 'key = value'")
        k, v = line.split(" = ", 1)
        entries[k.strip()] = v.strip()
    if entries.get("format") != FORMAT:
        raise CheckpointError(f"{path}: unsupported checkpoint format {entries.get('format')!r}")
    return entries


def load_checkpoint(path) -> tuple[ParameterSet, dict]:
    path = Path(path)
    entries = read_manifest(path)
    blob = (path / "params.bin").read_bytes()
    params = ParameterSet(np.float32)
    moments: dict[str, np.ndarray] = {}
    meta = {}
    for key, value in entries.items():
        if key.startswith("meta."):
            meta[key[5:]] = json.loads(value)
            continue
        if not (key.startswith("param.") or key.startswith("adam.m.") or key.startswith("adam.v.")):
            continue
        fields = dict(part.split("=", 1) for part in value.split())
        shape = () if fields["shape"] == "scalar" else tuple(int(d) for d in fields["shape"].split("x"))
        offset = int(fields["offset"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(blob):
            raise CheckpointError(f"{path}: block {key} runs past end of params.bin")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).astype(np.float32).reshape(shape)
        if key.startswith("param."):
            params.add(key[6:], arr)
        else:
            moments[key] = arr
    for name in params:
        if f"adam.m.{name}" in moments:
            params.m[name] = moments[f"adam.m.{name}"]
            params.v[name] = moments[f"adam.v.{name}"]
    params.step = int(entries.get("adam.step", 0))
    return params, meta
