"""Self-describing binary checkpoints.

Layout: magic, format version, a JSON header (stage tag, config snapshot,
optional label names, parameter/optimizer blob table), then the raw
little-endian array bytes, then a CRC32 of the payload. Loading verifies
the magic, version, declared lengths and checksum, so truncation or
corruption fails loudly.
"""
from __future__ import annotations

import json
import zlib

import numpy as np

MAGIC = b"RSVPCKP1"
VERSION = 1
STAGES = ("retrieval", "generation", "finetuned")

_DTYPE_CODES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(Exception):
    pass


class Checkpoint:
    """In-memory view of a loaded checkpoint."""

    def __init__(self, stage, config, labels, arrays, moments1, moments2, steps):
        self.stage = stage
        self.config = config
        self.labels = labels
        self.arrays = arrays
        self.moments1 = moments1
        self.moments2 = moments2
        self.steps = steps


def save_checkpoint(path, stage: str, components: dict, config: dict, labels=None) -> None:
    """Serialize named components (objects exposing named_parameters()).

    Parameter tensors and their AdamW moment buffers are all stored, so a
    reload restores training state exactly.
    """
    if stage not in STAGES:
        raise ValueError(f"unknown stage tag {stage!r}, expected one of {STAGES}")
    entries = []
    blobs = []
    steps = {}
    offset = 0

    def _push(name, arr):
        nonlocal offset
        dtype_name = str(arr.dtype)
        if dtype_name not in _DTYPE_CODES:
            raise ValueError(f"unsupported array dtype {dtype_name} for {name}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPE_CODES[dtype_name]).tobytes()
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype_name,
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    for comp_name, comp in components.items():
        for pname, p in comp.named_parameters():
            full = f"{comp_name}.{pname}"
            _push(full, p.data)
            _push(f"moment1.{full}", p.m)
            _push(f"moment2.{full}", p.v)
            steps[full] = p.step

    header = {
        "stage": stage,
        "config": config,
        "labels": list(labels) if labels is not None else None,
        "steps": steps,
        "params": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(blobs)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(VERSION.to_bytes(4, "little"))
        f.write(len(header_bytes).to_bytes(8, "little"))
        f.write(header_bytes)
        f.write(len(payload).to_bytes(8, "little"))
        f.write(payload)
        f.write(zlib.crc32(payload).to_bytes(4, "little"))


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < len(MAGIC) + 12 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    version = int.from_bytes(data[pos : pos + 4], "little")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 4
    hlen = int.from_bytes(data[pos : pos + 8], "little")
    pos += 8
    if pos + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header")
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    plen = int.from_bytes(data[pos : pos + 8], "little")
    pos += 8
    if pos + plen + 4 > len(data):
        raise CheckpointError(f"{path}: truncated payload")
    payload = data[pos : pos + plen]
    crc = int.from_bytes(data[pos + plen : pos + plen + 4], "little")
    if zlib.crc32(payload) != crc:
        raise CheckpointError(f"{path}: payload checksum mismatch")

    arrays, m1, m2 = {}, {}, {}
    for entry in header["params"]:
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=_DTYPE_CODES[entry["dtype"]]).reshape(entry["shape"])
        arr = arr.astype(entry["dtype"], copy=True)
        name = entry["name"]
        if name.startswith("moment1."):
            m1[name[len("moment1.") :]] = arr
        elif name.startswith("moment2."):
            m2[name[len("moment2.") :]] = arr
        else:
            arrays[name] = arr
    return Checkpoint(
        stage=header["stage"],
        config=header["config"],
        labels=header.get("labels"),
        arrays=arrays,
        moments1=m1,
        moments2=m2,
        steps=header.get("steps", {}),
    )


def restore_component(ckpt: Checkpoint, comp_name: str, component) -> None:
    """Copy checkpoint arrays (and optimizer state) into a live component."""
    for pname, p in component.named_parameters():
        full = f"{comp_name}.{pname}"
        if full not in ckpt.arrays:
            raise CheckpointError(f"checkpoint is missing parameter {full!r}")
        arr = ckpt.arrays[full]
        if tuple(arr.shape) != tuple(p.data.shape):
            raise CheckpointError(
                f"shape mismatch for {full!r}: checkpoint {arr.shape} vs model {p.data.shape}"
            )
        p.tensor.data = arr.astype(p.data.dtype, copy=True)
        p.m = ckpt.moments1[full].astype(p.data.dtype, copy=True)
        p.v = ckpt.moments2[full].astype(p.data.dtype, copy=True)
        p.step = int(ckpt.steps.get(full, 0))
