"""Checkpoint directory: ``manifest.json`` plus one little-endian float32 blob file.

Each named tensor (parameters, then ``momentum/<name>`` optimizer buffers)
occupies ``[offset, offset + nbytes)`` of ``params.bin``.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import DataFormatError
from .layers import Model, architecture_to_json, parse_architecture
from .regularization import LossConfig
from .tensor import get_dtype
from .training import Plateau, SgdConfig, TrainState

VERSION = 1
BLOB = "params.bin"


def save_checkpoint(path, state: TrainState, extra: dict | None = None) -> None:
    """Write ``state`` to directory ``path``. ``extra`` entries (data config,
    normalization statistics) are stored verbatim in the manifest."""
    os.makedirs(path, exist_ok=True)
    model = state.model
    named = list(model.tensors().items())
    named += [(f"momentum/{n}", t) for n, t in model.tensors().items() if t in state.velocity]
    entries, offset = [], 0
    with open(os.path.join(path, BLOB), "wb") as fh:
        for name, t in named:
            arr = state.velocity[t] if name.startswith("momentum/") else t.data
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(raw)
            entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
            offset += len(raw)
    manifest = {
        "version": VERSION,
        "architecture": architecture_to_json(model.items),
        "input_shape": list(model.input_shape),
        "loss": state.loss_cfg.to_json(),
        "sgd": state.sgd_cfg.to_json(),
        "prune": state.prune,
        "epoch": state.epoch,
        "ranks": {p.name: p.r for p in model.factorized()},
        "init_sigma": state.init_sigma,
        "rng_state": state.rng.bit_generator.state,
        "plateau": state.plateau.to_json(),
        "blob": BLOB,
        "tensors": entries,
        **(extra or {}),
    }
    with open(os.path.join(path, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1)


def read_manifest(path) -> dict:
    fn = os.path.join(path, "manifest.json")
    try:
        with open(fn, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except FileNotFoundError as exc:
        raise DataFormatError(f"no checkpoint manifest at {fn}") from exc
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"corrupt manifest {fn}: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise DataFormatError(f"unsupported checkpoint version {manifest.get('version')!r}")
    return manifest


def _read_blobs(path, manifest) -> dict[str, np.ndarray]:
    fn = os.path.join(path, manifest.get("blob", BLOB))
    if not os.path.exists(fn):
        raise DataFormatError(f"missing blob file {fn}")
    raw = open(fn, "rb").read()
    out = {}
    for e in manifest["tensors"]:
        end = e["offset"] + e["nbytes"]
        if e["offset"] < 0 or end > len(raw):
            raise DataFormatError(f"tensor {e['name']!r}: bytes [{e['offset']}, {end}) past end of {fn} ({len(raw)} bytes)")
        if e["nbytes"] != 4 * int(np.prod(e["shape"], dtype=np.int64)):
            raise DataFormatError(f"tensor {e['name']!r}: byte count does not match shape {e['shape']}")
        out[e["name"]] = np.frombuffer(raw, dtype="<f4", count=e["nbytes"] // 4, offset=e["offset"]).reshape(e["shape"])
    return out


def load_checkpoint(path) -> tuple[TrainState, dict]:
    """Rebuild the training state; returns ``(state, manifest)``."""
    manifest = read_manifest(path)
    blobs = _read_blobs(path, manifest)
    items = parse_architecture(manifest["architecture"])
    # throwaway draw; every tensor is overwritten below
    model = Model.build(items, tuple(manifest["input_shape"]), np.random.default_rng(0))
    dt = get_dtype()
    tensors = model.tensors()
    for name, t in tensors.items():
        if name not in blobs:
            raise DataFormatError(f"checkpoint lacks tensor {name!r}")
        t.data = blobs[name].astype(dt)
    for p in model.factorized():
        if p.U.shape[1] != p.r or p.V.shape[1] != p.r:
            raise DataFormatError(f"inconsistent factor ranks in layer {p.name!r}")
    velocity = {}
    for name, t in tensors.items():
        key = f"momentum/{name}"
        if key in blobs:
            velocity[t] = blobs[key].astype(dt)
    rng = np.random.default_rng()
    rng.bit_generator.state = manifest["rng_state"]
    state = TrainState(
        model=model,
        loss_cfg=LossConfig.from_json(manifest["loss"]),
        sgd_cfg=SgdConfig.from_json(manifest["sgd"]),
        rng=rng,
        plateau=Plateau.from_json(manifest["plateau"]),
        velocity=velocity,
        epoch=int(manifest["epoch"]),
        prune=bool(manifest["prune"]),
        init_sigma=manifest["init_sigma"],
    )
    return state, manifest
