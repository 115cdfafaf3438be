"""The ``KJ-CKPT-1`` parameter checkpoint container.

Layout::

    b"KJ-CKPT-1\\n"
    uint64 little-endian  header length in bytes
    header                UTF-8 JSON (sorted keys)
    payload               concatenated little-endian raw arrays

The header lists every array as ``{"name", "shape", "dtype", "offset",
"nbytes"}`` with offsets relative to the payload start. Parameter arrays live
under ``"params"``. ``"adam"`` is a list of optimizer groups (one per
independently trained network), each with the Adam scalars, the parameter
names it covers and its first/second moment arrays. ``"meta"`` is free-form
JSON. Output bytes depend only on the inputs.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .optim import AdamState

MAGIC = b"KJ-CKPT-1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: dict
    optimizers: list = field(default_factory=list)  # [(names, AdamState), ...]
    meta: dict = field(default_factory=dict)

    @property
    def adam(self):
        return self.optimizers[0][1] if self.optimizers else None


def _le(arr):
    arr = np.asarray(getattr(arr, "data", arr))
    return np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))


def save_checkpoint(path, params, optimizers=(), meta=None):
    """Write ``params`` ({name: array}) and optimizer groups [(names, AdamState)]."""
    entries, chunks = [], []
    offset = 0

    def _add(name, arr):
        nonlocal offset
        arr = _le(arr)
        raw = arr.tobytes()
        chunks.append(raw)
        entry = {"name": name, "shape": list(arr.shape), "dtype": arr.dtype.str, "offset": offset, "nbytes": len(raw)}
        offset += len(raw)
        return entry

    for name in params:
        entries.append(_add(name, params[name]))
    groups = []
    for names, adam in optimizers:
        names = list(names)
        if adam.first_moment and len(names) != len(adam.first_moment):
            raise CheckpointError("optimizer names must align with its moment buffers")
        groups.append({
            "step": adam.step,
            "lr": adam.lr,
            "beta1": adam.beta1,
            "beta2": adam.beta2,
            "epsilon": adam.epsilon,
            "names": names,
            "first_moment": [_add(n, m) for n, m in zip(names, adam.first_moment)],
            "second_moment": [_add(n, v) for n, v in zip(names, adam.second_moment)],
        })
    header = {"format": MAGIC.decode().strip(), "params": entries, "adam": groups, "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for raw in chunks:
            fh.write(raw)
    return path


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a KJ-CKPT-1 file")
    pos = len(MAGIC)
    if len(raw) < pos + 8:
        raise CheckpointError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<Q", raw, pos)
    pos += 8
    try:
        header = json.loads(raw[pos : pos + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    payload = memoryview(raw)[pos + hlen :]

    def _read(entry):
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated array {entry['name']}")
        dtype = np.dtype(entry["dtype"])
        arr = np.frombuffer(payload[entry["offset"] : end], dtype=dtype).reshape(entry["shape"])
        return arr.astype(dtype.newbyteorder("="))

    params = {e["name"]: _read(e) for e in header["params"]}
    optimizers = []
    for a in header.get("adam") or []:
        state = AdamState(
            lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], epsilon=a["epsilon"], step=a["step"],
            first_moment=[_read(e) for e in a["first_moment"]],
            second_moment=[_read(e) for e in a["second_moment"]],
        )
        optimizers.append((a["names"], state))
    return Checkpoint(params=params, optimizers=optimizers, meta=header.get("meta", {}))
